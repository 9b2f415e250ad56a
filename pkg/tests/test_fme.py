from fractions import Fraction

import numpy as np
import pytest

from secoord import fme
from secoord.errors import MissingAtom, NonCanonicalAtom, ParseError
from secoord.factorize import Kind
from secoord.fme import Atom


def sys_of(text, variables=None):
    return fme.parse_system(text, variables)


def test_parse_link_row():
    row = fme.parse_row("R01 + Rt1 <= H(U1|X1) + H(V1)")
    assert row.rates == {"R01": -1, "Rt1": -1}
    assert row.atoms == {Atom(("U1",), ("X1",)): 1, Atom(("V1",)): 1}
    assert row.const == 0
    assert fme.format_row(row) == "R01 + Rt1 <= H(U1|X1) + H(V1)"


def test_parse_tautology_dropped():
    assert len(sys_of("0 <= 0")) == 0


def test_parse_errors():
    with pytest.raises(NonCanonicalAtom):
        fme.parse_row("R01 <= H(U1|U1)")
    with pytest.raises(ParseError):
        fme.parse_row("R01 <= H(U1")
    with pytest.raises(ParseError):
        fme.parse_row("R01 H(U1)")
    with pytest.raises(ParseError) as info:
        sys_of("R01 <= 1\n\nR01 <= <=")
    assert "3" in str(info.value)


def test_parse_rationals_and_comments():
    row = sys_of("# comment\n1/2 R01 - 3/4 <= 2 H(A,B|C)  # trailing").rows[0]
    assert row.normalized() == row
    assert row.rates["R01"] < 0
    assert Atom(("B", "A"), ("C",)) in row.atoms


def test_eliminate_pair():
    out = fme.eliminate(sys_of("x <= H(A)\nx >= H(B)"), ["x"])
    assert fme.format_system(out) == "H(B) <= H(A)"


def test_eliminate_unbounded_side():
    assert len(fme.eliminate(sys_of("x >= 1"), ["x"])) == 0
    with pytest.raises(MissingAtom):
        fme.eliminate(sys_of("x >= 1"), ["y"])


def test_prune_examples():
    s = fme.prune(sys_of("x >= 1\nx >= 0"))
    assert s.rows == sys_of("x >= 1").rows
    s = fme.prune(sys_of("x + y >= 1\nx + y >= 1"))
    assert len(s) == 1
    s = fme.prune(sys_of("x + y >= 1\nx >= 1\ny >= 1"))
    assert len(s) == 3


def test_evaluate_link_row():
    s = sys_of("R01 + Rt1 <= H(U1|X1) + H(V1)")
    val = {Atom(("U1",), ("X1",)): 1.0, Atom(("V1",)): 1.0}
    ok = fme.evaluate(s, val, {"R01": 1.0, "Rt1": 0.5})
    assert ok.ok and ok.slacks == (0.5,)
    bad = fme.evaluate(s, val, {"R01": 1.0, "Rt1": 1.5})
    assert not bad.ok and bad.slacks == (-0.5,)
    assert fme.evaluate(sys_of("0 <= 0"), {}, {}).ok
    with pytest.raises(MissingAtom):
        fme.evaluate(s, {}, {"R01": 1.0, "Rt1": 0.0})


@pytest.mark.parametrize("fixture", fme.FIXTURES)
def test_fixtures_round_trip(fixture):
    s = fme.load_fixture(fixture)
    again = fme.parse_system(fme.format_system(s))
    assert again.rows == s.rows


def test_fixture_sizes():
    assert len(fme.load_fixture("inner_system")) == 9
    # with cribbing the sum of the two binning-rate rows is implied and omitted
    assert len(fme.load_fixture("crib_system")) == 8
    with pytest.raises(ParseError):
        fme.load_fixture("nope")


@pytest.mark.parametrize("kind,system,region", [
    (Kind.INNER, "inner_system", "inner_region"),
    (Kind.CRIB, "crib_system", "crib_region"),
])
def test_elimination_equivalent(kind, system, region):
    s = fme.eliminate(fme.load_fixture(system), ["Rt1", "Rt2"])
    verdict = fme.equivalence_check(s, fme.load_fixture(region), fme.pmf_sampler(kind), 40, seed=3)
    assert verdict.equivalent
    assert verdict.feasible_trials > 0


def test_sum_row_perturbation_detected():
    region = fme.load_fixture("inner_region")
    rows = list(region.rows)
    i = next(k for k, r in enumerate(rows) if r.rates == {"R01": 1, "R02": 1})
    rows[i] = fme.Row(rows[i].coeffs, rows[i].const - Fraction(1, 10))
    perturbed = fme.LinearSystem(region.variables, tuple(rows))
    s = fme.eliminate(fme.load_fixture("inner_system"), ["Rt1", "Rt2"])
    verdict = fme.equivalence_check(s, perturbed, fme.pmf_sampler(Kind.INNER), 200, seed=0)
    assert not verdict.equivalent
    assert verdict.counterexample is not None
    assert set(verdict.counterexample) >= {"R01", "R02", "valuation"}


def test_self_equivalence():
    r = fme.load_fixture("crib_region")
    assert fme.equivalence_check(r, r, fme.pmf_sampler(Kind.CRIB), 10).equivalent


def test_back_substitution_recovers_point():
    s = fme.load_fixture("inner_system")
    hist = fme.eliminate_with_history(s, ["Rt1", "Rt2"])
    sampler = fme.pmf_sampler(Kind.INNER)
    rng = np.random.default_rng(7)
    found = 0
    for _ in range(30):
        val = sampler(rng, s.atoms)
        for r01 in np.arange(0, 3, 0.25):
            for r02 in np.arange(0, 3, 0.25):
                rates = {"R01": r01, "R02": r02}
                if fme.evaluate(hist[-1], val, rates):
                    point = fme.back_substitute(hist, ["Rt1", "Rt2"], val, rates)
                    assert point is not None
                    assert fme.evaluate(s, val, point)
                    found += 1
    assert found > 0
