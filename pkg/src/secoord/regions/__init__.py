"""Region evaluation and boundary optimization."""

from .evaluate import (
    EVALUATORS,
    HalfPlane,
    Predicate,
    RateConstraintSet,
    SlackReport,
    check_rate_pair,
    eval_crib,
    eval_inner,
    eval_outer,
    eval_thm3,
    g_eps,
    noiseless_link_capacities,
    noiseless_links,
    remark1_specialize,
)
from .optimize import (
    ConverseReport,
    OptimizationBudget,
    RegionPoint,
    cardinality_sweep,
    converse_search_prop1,
    default_cards,
    decoder_residual_lp,
    embed,
    min_decoder_residual,
    minimize_r01,
    repair_decoder,
)
