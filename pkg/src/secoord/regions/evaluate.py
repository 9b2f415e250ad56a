"""Constraint sets of the coordination regions at a fixed joint pmf.

Each evaluator returns a :class:`RateConstraintSet`: feasibility predicates
(``lhs >= rhs``; slack ``lhs - rhs``) and half-planes
``a·R01 + b·R02 >= c``. All terms are conditioned on the time-sharing
variable T. Evaluators accept either a full :class:`JointPmf` or a
:class:`BlockJoint`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .. import probcore as pc
from ..errors import ChannelNotDeterministic, ChannelNotNoiselessLinks, EpsOutOfRange, UnknownVariable
from ..factorize import LEGIT_NAMES, TARGET_NAMES, BlockJoint
from ..probcore import Alphabet, ChannelKernel, JointPmf

SLACK_TOL = 1e-9
DET_TOL = 1e-9


@dataclass(frozen=True)
class Predicate:
    """Holds when ``lhs >= rhs`` up to ``SLACK_TOL``."""

    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.lhs - self.rhs

    @property
    def holds(self) -> bool:
        return self.slack >= -SLACK_TOL


@dataclass(frozen=True)
class HalfPlane:
    """``a·R01 + b·R02 >= c``."""

    name: str
    a: int
    b: int
    c: float

    def slack(self, r01: float, r02: float) -> float:
        total = -self.c
        for coef, rate in ((self.a, r01), (self.b, r02)):
            if coef:
                total += coef * rate
        return total


@dataclass(frozen=True)
class RateConstraintSet:
    kind: str
    feasibility: tuple[Predicate, ...] = ()
    rate_bounds: tuple[HalfPlane, ...] = ()

    @property
    def feasible(self) -> bool:
        return all(p.holds for p in self.feasibility)

    def predicate(self, name: str) -> Predicate:
        for p in self.feasibility:
            if p.name == name:
                return p
        raise KeyError(name)

    def bound(self, name: str) -> HalfPlane:
        for h in self.rate_bounds:
            if h.name == name:
                return h
        raise KeyError(name)

    def min_r01(self) -> float:
        """Smallest R01 allowed when R02 is unconstrained (never below 0)."""
        cs = [h.c for h in self.rate_bounds if h.a == 1 and h.b == 0]
        return max([0.0] + cs)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "constraints": [
                {"name": p.name, "lhs": p.lhs, "rhs": p.rhs, "slack": p.slack}
                for p in self.feasibility
            ],
            "rate_bounds": [
                {"name": h.name, "a": h.a, "b": h.b, "c": h.c} for h in self.rate_bounds
            ],
        }


@dataclass(frozen=True)
class SlackReport:
    ok: bool
    slacks: dict[str, float]

    def __bool__(self) -> bool:
        return self.ok


def check_rate_pair(cset: RateConstraintSet, r01: float, r02: float) -> SlackReport:
    """Membership of (r01, r02); ``r02 = math.inf`` drops every half-plane with b > 0."""
    slacks: dict[str, float] = {}
    ok = True
    for p in cset.feasibility:
        slacks[p.name] = p.slack
        ok &= p.holds
    for h in cset.rate_bounds:
        if (h.b > 0 and math.isinf(r02)) or (h.a > 0 and math.isinf(r01)):
            continue
        s = h.slack(r01, r02)
        slacks[h.name] = s
        ok &= s >= -SLACK_TOL
    return SlackReport(bool(ok), slacks)


class _Info:
    """Cached entropies of a joint or block joint."""

    def __init__(self, joint: JointPmf | BlockJoint):
        self.joint = joint
        self._cache: dict[frozenset[str], float] = {}
        for n in ("T",):
            if not joint.has(n):
                raise UnknownVariable(f"joint must carry {n}")

    def H(self, *groups: Iterable[str]) -> float:
        names = frozenset(n for g in groups for n in g)
        if names not in self._cache:
            if hasattr(self.joint, "joint_entropy"):
                h = self.joint.joint_entropy(names)
            else:
                h = pc.joint_entropy(self.joint, sorted(names))
            self._cache[names] = h
        return self._cache[names]

    def Hc(self, a: Sequence[str], given: Sequence[str] = ()) -> float:
        return max(self.H(a, given) - self.H(given), 0.0)

    def I(self, a: Sequence[str], b: Sequence[str], given: Sequence[str] = ()) -> float:
        v = self.H(a, given) + self.H(b, given) - self.H(a, b, given) - self.H(given)
        return max(v, 0.0) if v >= -pc.IDENTITY_TOL else v

    def legit(self) -> list[str]:
        names = [n for n in LEGIT_NAMES if self.joint.has(n)]
        if "Yt" in names:
            return ["Yt"]
        if names != ["Yt1", "Yt2"]:
            raise UnknownVariable("joint carries no legitimate channel output")
        return names


X = ["X1", "X2"]
XY = ["X1", "X2", "Y"]
WT = ["W", "T"]
T = ["T"]


def eval_inner(joint: JointPmf | BlockJoint) -> RateConstraintSet:
    """Inner bound with independent code layers V1, V2."""
    m = _Info(joint)
    yt = m.legit()
    u1, u2, v1, v2, zt = ["U1"], ["U2"], ["V1"], ["V2"], ["Zt"]
    iv1 = m.I(v1, v2 + yt, T)
    iv2 = m.I(v2, v1 + yt, T)
    iu12 = m.I(u1, u2, WT)
    feas = (
        Predicate("link1", iv1, m.I(u1, ["X1"], u2 + WT)),
        Predicate("link2", iv2, m.I(u2, ["X2"], u1 + WT)),
        Predicate("link_sum", m.I(v1 + v2, yt, T), m.I(u1 + u2, X, WT)),
    )
    bounds = (
        HalfPlane("r01", 1, 0, m.I(u1, XY, WT) - iu12 + m.I(v1, zt, T) - iv1),
        HalfPlane("r02", 0, 1, m.I(u2, XY, WT) - iu12 + m.I(v2, zt, T) - iv2),
        HalfPlane(
            "r01_joint", 1, 0,
            m.I(u1, XY, WT) + m.I(u2, ["X2"], u1 + WT) + m.I(v1, zt, T) - m.I(v1, yt, T) - iv2,
        ),
        HalfPlane(
            "r02_joint", 0, 1,
            m.I(u2, XY, WT) + m.I(u1, ["X1"], u2 + WT) + m.I(v2, zt, T) - m.I(v2, yt, T) - iv1,
        ),
        HalfPlane(
            "r_sum", 1, 1, m.I(u1 + u2, XY, WT) + m.I(v1 + v2, zt, T) - m.I(v1 + v2, yt, T)
        ),
    )
    return RateConstraintSet("InnerThm1", feas, bounds)


def eval_crib(joint: JointPmf | BlockJoint) -> RateConstraintSet:
    """Inner bound when encoder 1 observes encoder 2's channel input."""
    m = _Info(joint)
    yt = m.legit()
    u1, u2, v1, v2, zt = ["U1"], ["U2"], ["V1"], ["V2"], ["Zt"]
    iv1 = m.I(v1, v2 + yt, T)
    iv2 = m.I(v2, v1 + yt, T)
    crib = m.I(v1, ["Xt2"], T)
    iu1 = m.I(u1, ["X1"], u2 + WT)
    iu2_net = m.I(u2, ["X2"], T) - m.I(u2, u1 + ["W"], T)
    iu12 = m.I(u1, u2, WT)
    feas = (
        Predicate("link1", iv1 - crib, iu1),
        Predicate("link2", iv2, iu2_net),
        Predicate("link_sum", iv1 + m.I(v2, yt, T) - crib, iu1 + m.I(u2, ["X2"], WT)),
    )
    bounds = (
        HalfPlane("r01", 1, 0, m.I(u1, XY, WT) - iu12 + m.I(v1, zt, T) - iv1),
        HalfPlane("r02", 0, 1, m.I(u2, XY, WT) - iu12 + m.I(v2, zt, T) - iv2),
        HalfPlane(
            "r01_joint", 1, 0,
            m.I(u1, XY, WT) + iu2_net + m.I(v1, zt, T) - m.I(v1, yt, T) - iv2,
        ),
        HalfPlane(
            "r02_joint", 0, 1,
            m.I(u2, XY, WT) + iu1 + m.I(v2, zt, T) - m.I(v2, yt, T) + crib - iv1,
        ),
        HalfPlane(
            "r_sum", 1, 1, m.I(u1 + u2, XY, WT) + m.I(v1 + v2, zt, T) - m.I(v1 + v2, yt, T)
        ),
    )
    return RateConstraintSet("CribThm4", feas, bounds)


def g_eps(eps: float, q: JointPmf, z_alphabet: Alphabet) -> float:
    """Continuity slack of the outer bound; ``eps = 0`` gives the limit value 0."""
    if eps == 0:
        return 0.0
    if not (0.0 < eps <= 0.25):
        raise EpsOutOfRange(f"eps={eps!r} outside (0, 1/4]")
    hq = pc.joint_entropy(q, TARGET_NAMES)
    card = math.prod(q.alphabet(n).size for n in TARGET_NAMES) * z_alphabet.size
    return 2.0 * math.sqrt(eps) * (hq + math.log2(card / eps))


def _target_of(joint: JointPmf | BlockJoint) -> JointPmf:
    base = joint.u if isinstance(joint, BlockJoint) else joint
    return pc.marginal(base, TARGET_NAMES)


def eval_outer(joint: JointPmf | BlockJoint, eps: float | None = None) -> RateConstraintSet:
    """Outer bound; ``eps=None`` selects the limit mode (g = 0)."""
    if eps is not None and not (0.0 < eps <= 0.25):
        raise EpsOutOfRange(f"eps={eps!r} outside (0, 1/4]")
    m = _Info(joint)
    yt = m.legit()
    u1, u2, zt = ["U1"], ["U2"], ["Zt"]
    xt = ["Xt1", "Xt2"]
    g = 0.0 if eps is None else g_eps(eps, _target_of(joint), joint.alphabet("Zt"))
    common = m.Hc(["Y"], X + WT) + m.I(xt, yt, zt + T) + 2.0 * g
    feas = (
        Predicate("link1", m.I(["Xt1"], yt, ["Xt2"] + T), m.I(u1, ["X1"], u2 + ["X2"] + WT)),
        Predicate("link2", m.I(["Xt2"], yt, ["Xt1"] + T), m.I(u2, ["X2"], u1 + ["X1"] + WT)),
        Predicate("link_sum", m.I(xt, yt, T), m.I(u1 + u2, X, WT)),
    )
    bounds = (
        HalfPlane("r01", 1, 0, m.I(u1, XY, WT) - common),
        HalfPlane("r02", 0, 1, m.I(u2, XY, WT) - common),
        HalfPlane("r_sum", 1, 1, m.I(u1 + u2, XY, WT) - common),
    )
    return RateConstraintSet("OuterThm2", feas, bounds)


def eval_thm3(joint: JointPmf | BlockJoint) -> RateConstraintSet:
    """Region for deterministic legitimate links Yt1 = f1(Xt1), Yt2 = f2(Xt2)."""
    m = _Info(joint)
    for y, x in (("Yt1", "Xt1"), ("Yt2", "Xt2")):
        if not joint.has(y):
            raise UnknownVariable(f"deterministic-link joint must carry {y}")
        if m.Hc([y], [x]) > DET_TOL:
            raise ChannelNotDeterministic(f"{y} is not a function of {x}")
    feas = (
        Predicate("link1", m.Hc(["Yt1"], T), m.I(["U1"], ["X1"], WT)),
        Predicate("link2", m.Hc(["Yt2"], T), m.I(["U2"], ["X2"], WT)),
    )
    bounds = (
        HalfPlane(
            "r01", 1, 0, m.I(["U1"], ["X1", "Y"], ["X2"] + WT) - m.Hc(["Yt1"], ["Zt"] + T)
        ),
    )
    return RateConstraintSet("TightThm3", feas, bounds)


def remark1_specialize(
    joint: JointPmf | BlockJoint,
    r1: float,
    r2: float,
    channel: ChannelKernel | None = None,
) -> RateConstraintSet:
    """Inner bound over two noiseless links of rates r1, r2 seen by the eavesdropper.

    Only the U-block of ``joint`` is read. When ``channel`` is given it must
    be a pair of independent identity links with Zt equal to the legitimate
    output, and r1, r2 must not exceed the link capacities.
    """
    for r in (r1, r2):
        if not (math.isfinite(r) and r >= 0):
            raise ChannelNotNoiselessLinks(f"link rate {r!r} must be finite and nonnegative")
    if channel is not None:
        c1, c2 = noiseless_link_capacities(channel)
        if r1 > c1 + SLACK_TOL or r2 > c2 + SLACK_TOL:
            raise ChannelNotNoiselessLinks(f"rates ({r1}, {r2}) exceed capacities ({c1}, {c2})")
    m = _Info(joint)
    u1, u2 = ["U1"], ["U2"]
    iu12 = m.I(u1, u2, WT)
    feas = (
        Predicate("link1", r1, m.I(u1, ["X1"], u2 + WT)),
        Predicate("link2", r2, m.I(u2, ["X2"], u1 + WT)),
        Predicate("link_sum", r1 + r2, m.I(u1 + u2, X, WT)),
    )
    bounds = (
        HalfPlane("r01", 1, 0, m.I(u1, XY, WT) - iu12),
        HalfPlane("r02", 0, 1, m.I(u2, XY, WT) - iu12),
        HalfPlane("r01_joint", 1, 0, m.I(u1, XY, WT) + m.I(u2, ["X2"], u1 + WT) - r2),
        HalfPlane("r02_joint", 0, 1, m.I(u2, XY, WT) + m.I(u1, ["X1"], u2 + WT) - r1),
        HalfPlane("r_sum", 1, 1, m.I(u1 + u2, XY, WT)),
    )
    return RateConstraintSet("Remark1", feas, bounds)


def noiseless_links(size1: int, size2: int) -> ChannelKernel:
    """Two identity links; the eavesdropper sees both outputs (Zt = (Yt1, Yt2))."""
    a1, a2 = Alphabet.of_size("Xt1", size1), Alphabet.of_size("Xt2", size2)
    zt = Alphabet("Zt", tuple(f"{i}.{j}" for i in range(size1) for j in range(size2)))
    table = np.zeros((size1, size2, size1, size2, size1 * size2))
    for i in range(size1):
        for j in range(size2):
            table[i, j, i, j, i * size2 + j] = 1.0
    return pc.make_kernel([a1, a2], [a1.renamed("Yt1"), a2.renamed("Yt2"), zt], table)


def noiseless_link_capacities(channel: ChannelKernel) -> tuple[float, float]:
    """log2 of the link alphabet sizes after checking the link structure."""
    if set(channel.input_names) != {"Xt1", "Xt2"} or set(channel.output_names) != {
        "Yt1", "Yt2", "Zt",
    }:
        raise ChannelNotNoiselessLinks(f"{channel!r} is not a two-link channel")
    ins = channel.inputs
    s1, s2 = ins[0].size, ins[1].size
    uniform = pc.make_joint(ins, np.full((s1, s2), 1.0 / (s1 * s2)))
    joint = pc.chain(uniform, channel)
    if channel.input_names[0] != "Xt1":
        s1, s2 = s2, s1
    checks = (
        pc.entropy(joint, ["Yt1"], ["Xt1"]),
        pc.entropy(joint, ["Xt1"], ["Yt1"]),
        pc.entropy(joint, ["Yt2"], ["Xt2"]),
        pc.entropy(joint, ["Xt2"], ["Yt2"]),
        pc.entropy(joint, ["Zt"], ["Yt1", "Yt2"]),
        pc.entropy(joint, ["Yt1", "Yt2"], ["Zt"]),
    )
    if max(checks) > DET_TOL:
        raise ChannelNotNoiselessLinks("links are noisy or the eavesdropper output differs")
    return math.log2(s1), math.log2(s2)


EVALUATORS = {
    "InnerThm1": eval_inner,
    "CribThm4": eval_crib,
    "TightThm3": eval_thm3,
    "OuterThm2": eval_outer,
}
