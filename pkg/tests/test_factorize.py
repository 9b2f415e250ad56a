import json

import numpy as np
import pytest

from secoord import example1
from secoord import probcore as pc
from secoord.errors import (
    AlphabetMismatch,
    InputError,
    MissingFactor,
    SourcesNotConditionallyIndependent,
)
from secoord.factorize import (
    AuxiliaryFactorization,
    Kind,
    check_target,
    random_factorization,
    required_roles,
    uniform_t,
)

U_BLOCK = ["X1", "X2", "W", "U1", "U2", "Y"]
V_BLOCK = {
    Kind.INNER: ["V1", "V2", "Xt1", "Xt2", "Zt"],
    Kind.CRIB: ["V1", "V2", "Xt1", "Xt2", "Zt"],
    Kind.THM3: ["Xt1", "Xt2", "Yt1", "Yt2", "Zt"],
    Kind.OUTER: ["Xt1", "Xt2", "Zt"],
}

# conditional-independence statements each kind must satisfy: (A, B, given)
MARKOV = {
    Kind.INNER: [
        (["U1"], ["U2", "X2", "W"], ["X1", "T"]),
        (["U2"], ["U1", "X1", "W"], ["X2", "T"]),
        (["V1", "Xt1"], ["V2", "Xt2"], ["T"]),
        (["Xt1"], ["V2", "Xt2", "U1", "X1"], ["V1", "T"]),
    ],
    Kind.CRIB: [
        (["U2"], ["X1", "W"], ["X2", "T"]),
        (["U1"], ["X2", "W"], ["X1", "U2", "T"]),
        (["V2"], ["U1", "U2", "X1"], ["T"]),
        (["V1"], ["V2"], ["Xt2", "T"]),
    ],
    Kind.THM3: [
        (["U1"], ["U2", "X2", "W"], ["X1", "T"]),
        (["Xt1"], ["Xt2"], ["T"]),
    ],
    Kind.OUTER: [
        (["U1", "U2"], ["W"], ["X1", "X2", "T"]),
    ],
}


def _legit(joint):
    return ["Yt"] if joint.has("Yt") else ["Yt1", "Yt2"]


@pytest.mark.parametrize("kind", list(Kind))
def test_random_factorizations_respect_structure(kind, rng):
    for _ in range(15):
        cert = random_factorization(kind, rng, t_size=2)
        joint = cert.assemble()
        v = [n for n in V_BLOCK[kind] if joint.has(n)] + [n for n in _legit(joint) if n not in V_BLOCK[kind]]
        assert pc.mutual_info(joint, U_BLOCK, v, ["T"]) <= 1e-9
        for a, b, c in MARKOV[kind]:
            assert pc.mutual_info(joint, a, b, c) <= 1e-9, (a, b, c)
        y_given = pc.mutual_info(joint, ["Y"], ["X1", "X2"] + v, ["U1", "U2", "W", "T"])
        assert y_given <= 1e-9
        # sources keep the target law and are independent of T
        src = pc.marginal(joint, ["T", "X1", "X2", "W"]).probs
        want = cert.t_dist.probs[:, None, None, None] * pc.marginal(cert.target, ["X1", "X2", "W"]).probs
        assert np.allclose(src, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", list(Kind))
def test_blocks_match_assembled_entropies(kind, rng):
    cert = random_factorization(kind, rng, t_size=2)
    joint, blocks = cert.assemble(), cert.blocks()
    names = list(joint.names)
    for _ in range(40):
        k = int(rng.integers(1, len(names) + 1))
        pick = list(rng.choice(names, size=k, replace=False))
        assert abs(blocks.joint_entropy(pick) - pc.joint_entropy(joint, pick)) <= 1e-10


def test_identity_factors_degenerate_joint():
    cert = example1.nocrib_thm3()
    joint = cert.assemble()
    assert pc.entropy(joint, ["U1"], ["X1"]) == 0.0
    assert pc.entropy(joint, ["X1"], ["U1"]) == 0.0
    assert check_target(joint, cert.target) <= 1e-12


@pytest.mark.parametrize("make", [example1.nocrib_inner, example1.nocrib_thm3, example1.crib_choice])
def test_example1_choices_meet_target(make):
    cert = make()
    assert check_target(cert.assemble(), cert.target) <= 1e-12
    assert check_target(cert.blocks(), cert.target) <= 1e-12


def test_target_residual_with_independent_coin():
    cert = example1.nocrib_inner()
    factors = dict(cert.factors)
    dec = factors["decoder"]
    factors["decoder"] = pc.make_kernel(dec.inputs, dec.outputs, np.full(dec.probs.shape, 1 / 3))
    joint = AuxiliaryFactorization(Kind.INNER, cert.t_dist, factors, cert.target).assemble()
    q = cert.target
    coin = pc.product(pc.marginal(q, ["X1", "X2", "W"]), pc.make_joint([q.alphabet("Y")], np.full(3, 1 / 3)))
    expected = pc.total_variation(coin, q)
    res = check_target(joint, q)
    assert res > 0
    assert abs(res - expected) <= 1e-12


def test_target_with_dummy_t():
    q = example1.target()
    joint = pc.product(uniform_t(3), q)
    assert check_target(joint, q) == 0.0


def test_thm3_rejects_dependent_sources():
    cert = example1.nocrib_thm3()
    q = cert.target
    table = np.zeros(q.shape)
    table[0, 0, 0, 2] = table[1, 1, 0, 1] = 0.5
    dependent = pc.make_joint(q.variables, table)
    with pytest.raises(SourcesNotConditionallyIndependent):
        AuxiliaryFactorization(Kind.THM3, cert.t_dist, cert.factors, dependent)
    assert pc.mutual_info(q, ["X1"], ["X2"], ["W"]) == 0.0


def test_missing_and_misshaped_factors():
    cert = example1.nocrib_inner()
    factors = dict(cert.factors)
    del factors["V1"]
    with pytest.raises(MissingFactor):
        AuxiliaryFactorization(Kind.INNER, cert.t_dist, factors, cert.target)
    factors = dict(cert.factors)
    factors["U1"] = cert.factors["U2"]
    with pytest.raises(AlphabetMismatch):
        AuxiliaryFactorization(Kind.INNER, cert.t_dist, factors, cert.target)
    assert "channel" in required_roles(Kind.CRIB)


def test_json_round_trip():
    cert = example1.crib_choice()
    back = AuxiliaryFactorization.from_json(json.loads(cert.serialized()))
    assert back.serialized() == cert.serialized()
    with pytest.raises(InputError):
        AuxiliaryFactorization.from_json({"kind": "crib"})
    with pytest.raises(InputError):
        Kind.parse("nope")
    assert Kind.parse("thm3") is Kind.THM3


def test_shipped_files_parse():
    from importlib import resources

    for name, kind in [("example1_opt.json", Kind.THM3), ("example1_inner.json", Kind.INNER),
                       ("example1_crib.json", Kind.CRIB)]:
        text = resources.files("secoord").joinpath("data", name).read_text()
        assert AuxiliaryFactorization.from_json(json.loads(text)).kind is kind
