"""Exact Fourier-Motzkin elimination over entropy atoms.

A row is ``sum c_i * rate_i + sum d_j * atom_j + k >= 0`` with rational
coefficients. Atoms are conditional entropies ``H(A|B)`` treated as opaque
symbols: no entropy inequality is used during elimination or pruning, so
the engine stays purely linear. Equivalence with a target system is
certified numerically by substituting entropies of random pmfs.

File format, one inequality per line (``#`` starts a comment)::

    R01 + Rt1 <= H(U1|X1) + H(V1)
    2*R01 - 1/2 H(V1,V2|Zt) >= 0
"""

from __future__ import annotations

import math
from importlib import resources
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import probcore as pc
from .errors import MissingAtom, NonCanonicalAtom, ParseError

SLACK_TOL = 1e-9
GRID_STEP = 0.05


@dataclass(frozen=True, order=True)
class Atom:
    """Conditional entropy H(A|B) in canonical form."""

    a: tuple[str, ...]
    b: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.a:
            raise NonCanonicalAtom("H(|...) needs a nonempty first group")
        if len(set(self.a)) != len(self.a) or len(set(self.b)) != len(self.b):
            raise NonCanonicalAtom(f"repeated variable in {self.a}|{self.b}")
        if set(self.a) & set(self.b):
            raise NonCanonicalAtom(f"H({','.join(self.a)}|{','.join(self.b)}) has overlapping groups")
        object.__setattr__(self, "a", tuple(sorted(self.a)))
        object.__setattr__(self, "b", tuple(sorted(self.b)))

    def __str__(self) -> str:
        a = ",".join(self.a)
        return f"H({a}|{','.join(self.b)})" if self.b else f"H({a})"


Coeffs = tuple[tuple[object, Fraction], ...]


def _key(sym: object) -> tuple:
    # rates sort before atoms
    return (0, sym, ()) if isinstance(sym, str) else (1, sym.a, sym.b)


@dataclass(frozen=True)
class Row:
    """``sum coeffs + const >= 0``; coefficients sorted, no zeros."""

    coeffs: Coeffs
    const: Fraction

    @classmethod
    def build(cls, coeffs: Mapping[object, Fraction], const: Fraction) -> "Row":
        items = tuple(sorted(((s, Fraction(c)) for s, c in coeffs.items() if c != 0), key=lambda t: _key(t[0])))
        return cls(items, Fraction(const))

    def coef(self, sym: object) -> Fraction:
        for s, c in self.coeffs:
            if s == sym:
                return c
        return Fraction(0)

    def normalized(self) -> "Row":
        """Scale so the non-constant part is a primitive integer vector."""
        if not self.coeffs:
            return self
        lcm = reduce(math.lcm, (c.denominator for _, c in self.coeffs), 1)
        nums = [int(c * lcm) for _, c in self.coeffs]
        g = reduce(math.gcd, (abs(n) for n in nums))
        scale = Fraction(lcm, g)
        return Row(tuple((s, c * scale) for s, c in self.coeffs), self.const * scale)

    @property
    def rates(self) -> dict[str, Fraction]:
        return {s: c for s, c in self.coeffs if isinstance(s, str)}

    @property
    def atoms(self) -> dict[Atom, Fraction]:
        return {s: c for s, c in self.coeffs if isinstance(s, Atom)}

    def value(self, val: Mapping[Atom, float], rates: Mapping[str, float]) -> float:
        total = float(self.const)
        for s, c in self.coeffs:
            if isinstance(s, Atom):
                if s not in val:
                    raise MissingAtom(f"no value for {s}")
                total += float(c) * val[s]
            else:
                if s not in rates:
                    raise MissingAtom(f"no value for rate {s}")
                total += float(c) * rates[s]
        return total

    def __str__(self) -> str:
        return format_row(self)


@dataclass(frozen=True)
class LinearSystem:
    variables: tuple[str, ...]
    rows: tuple[Row, ...] = field(default=())

    @property
    def atoms(self) -> set[Atom]:
        return {a for r in self.rows for a in r.atoms}

    def __len__(self) -> int:
        return len(self.rows)


def canonical_rows(rows: Iterable[Row]) -> tuple[Row, ...]:
    """Normalize, drop tautologies and exact duplicates; keeps first-seen order."""
    out: dict[Row, None] = {}
    for r in rows:
        r = r.normalized()
        if not r.coeffs and r.const >= 0:
            continue
        out.setdefault(r, None)
    return tuple(out)


def make_system(rows: Iterable[Row], variables: Sequence[str] | None = None) -> LinearSystem:
    rows = canonical_rows(rows)
    if variables is None:
        seen: dict[str, None] = {}
        for r in rows:
            for s in r.rates:
                seen.setdefault(s, None)
        variables = tuple(seen)
    return LinearSystem(tuple(variables), rows)


# ---------------------------------------------------------------- parsing


class _Lexer:
    def __init__(self, text: str, line: int):
        self.text = text
        self.pos = 0
        self.line = line

    def error(self, msg: str) -> ParseError:
        return ParseError(msg, self.line, self.pos + 1)

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, s: str) -> bool:
        self.skip()
        if self.text.startswith(s, self.pos):
            self.pos += len(s)
            return True
        return False

    def number(self) -> Fraction | None:
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isdigit() or self.text[self.pos] in "./"):
            self.pos += 1
        tok = self.text[start:self.pos]
        if not tok:
            return None
        try:
            return Fraction(tok)
        except (ValueError, ZeroDivisionError):
            self.pos = start
            raise self.error(f"bad number {tok!r}") from None

    def ident(self) -> str | None:
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self.pos += 1
        tok = self.text[start:self.pos]
        if tok and not tok[0].isalpha():
            self.pos = start
            raise self.error(f"bad identifier {tok!r}")
        return tok or None


def _group(lx: _Lexer, stop: str) -> tuple[str, ...]:
    names = []
    if lx.peek() == stop:
        return ()
    while True:
        name = lx.ident()
        if name is None:
            raise lx.error("expected a variable name")
        names.append(name)
        if not lx.take(","):
            return tuple(names)


def _atom(lx: _Lexer) -> Atom:
    a = _group(lx, "|")
    b: tuple[str, ...] = ()
    if lx.take("|"):
        b = _group(lx, ")")
    if not lx.take(")"):
        raise lx.error("expected ')'")
    return Atom(a, b)


def _expr(lx: _Lexer) -> tuple[dict[object, Fraction], Fraction]:
    coeffs: dict[object, Fraction] = {}
    const = Fraction(0)
    sign = Fraction(1)
    if lx.take("-"):
        sign = Fraction(-1)
    else:
        lx.take("+")
    while True:
        num = lx.number()
        if num is not None:
            lx.take("*")
        nxt = lx.peek()
        if nxt.isalpha():
            start = lx.pos
            name = lx.ident()
            if name == "H" and lx.take("("):
                sym: object = _atom(lx)
            else:
                sym = name
                if lx.peek() == "(":
                    lx.pos = start
                    raise lx.error(f"unknown function {name!r}")
            coeffs[sym] = coeffs.get(sym, Fraction(0)) + sign * (num if num is not None else 1)
        elif num is not None:
            const += sign * num
        else:
            raise lx.error("expected a term")
        if lx.take("+"):
            sign = Fraction(1)
        elif lx.take("-"):
            sign = Fraction(-1)
        else:
            return coeffs, const


def parse_row(text: str, line: int = 1) -> Row:
    lx = _Lexer(text, line)
    left, lc = _expr(lx)
    if lx.take("<="):
        flip = False
    elif lx.take(">="):
        flip = True
    else:
        raise lx.error("expected '<=' or '>='")
    right, rc = _expr(lx)
    if lx.peek():
        raise lx.error("unexpected trailing text")
    hi, lo, hc, lc_ = (left, right, lc, rc) if flip else (right, left, rc, lc)
    coeffs = dict(hi)
    for s, c in lo.items():
        coeffs[s] = coeffs.get(s, Fraction(0)) - c
    return Row.build(coeffs, hc - lc_)


def parse_system(text: str, variables: Sequence[str] | None = None) -> LinearSystem:
    """Parse the inequality file format into a canonical system.

    Examples
    --------
    >>> s = parse_system("R01 + Rt1 <= H(U1|X1) + H(V1)")
    >>> print(format_system(s))
    R01 + Rt1 <= H(U1|X1) + H(V1)
    """
    rows = []
    for i, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if body.strip():
            rows.append(parse_row(body, i))
    return make_system(rows, variables)


def _side(terms: list[tuple[object, Fraction]], const: Fraction) -> str:
    parts = []
    for sym, c in terms:
        text = str(sym) if c == 1 else f"{c}*{sym}" if isinstance(sym, str) else f"{c} {sym}"
        parts.append(text)
    if const:
        parts.append(str(const))
    return " + ".join(parts) if parts else "0"


def format_row(row: Row) -> str:
    """Negative terms on the left of ``<=``, positive ones on the right.

    The output parses back to the same canonical row.
    """
    left = [(s, -c) for s, c in row.coeffs if c < 0]
    right = [(s, c) for s, c in row.coeffs if c > 0]
    kl = -row.const if row.const < 0 else Fraction(0)
    kr = row.const if row.const > 0 else Fraction(0)
    return f"{_side(left, kl)} <= {_side(right, kr)}"


def format_system(sys: LinearSystem) -> str:
    return "\n".join(format_row(r) for r in sys.rows)


# ---------------------------------------------------------------- algebra


def prune(sys: LinearSystem) -> LinearSystem:
    """Drop duplicates and rows dominated by a row with the same coefficients.

    Only exact single-row dominance is used; full redundancy removal would
    need an LP and is not attempted.
    """
    best: dict[Coeffs, Fraction] = {}
    order: list[Coeffs] = []
    infeasible = None
    for r in canonical_rows(sys.rows):
        if not r.coeffs:
            infeasible = r if infeasible is None or r.const < infeasible.const else infeasible
            continue
        if r.coeffs not in best:
            order.append(r.coeffs)
            best[r.coeffs] = r.const
        else:
            best[r.coeffs] = min(best[r.coeffs], r.const)
    rows = [Row(c, best[c]) for c in order]
    if infeasible is not None:
        rows.insert(0, infeasible)
    return LinearSystem(sys.variables, tuple(rows))


def _combine(p: Row, n: Row, var: str) -> Row:
    cp, cn = p.coef(var), -n.coef(var)
    coeffs: dict[object, Fraction] = {}
    for s, c in p.coeffs:
        coeffs[s] = coeffs.get(s, Fraction(0)) + c * cn
    for s, c in n.coeffs:
        coeffs[s] = coeffs.get(s, Fraction(0)) + c * cp
    coeffs.pop(var, None)
    return Row.build(coeffs, p.const * cn + n.const * cp)


def eliminate_one(sys: LinearSystem, var: str) -> LinearSystem:
    pos = [r for r in sys.rows if r.coef(var) > 0]
    neg = [r for r in sys.rows if r.coef(var) < 0]
    rest = [r for r in sys.rows if r.coef(var) == 0]
    new = rest + [_combine(p, n, var) for p in pos for n in neg]
    variables = tuple(v for v in sys.variables if v != var)
    return prune(make_system(new, variables))


def eliminate(sys: LinearSystem, variables: Sequence[str]) -> LinearSystem:
    """Project out ``variables`` one at a time, pairing lower and upper bounds.

    Examples
    --------
    >>> s = parse_system("x <= H(A)\\nx >= H(B)")
    >>> print(format_system(eliminate(s, ["x"])))
    H(B) <= H(A)
    """
    for v in variables:
        if v not in sys.variables:
            raise MissingAtom(f"{v!r} is not a variable of the system")
    for v in variables:
        sys = eliminate_one(sys, v)
    return sys


def eliminate_with_history(sys: LinearSystem, variables: Sequence[str]) -> list[LinearSystem]:
    """Every intermediate system, starting with ``sys`` itself."""
    out = [sys]
    for v in variables:
        out.append(eliminate_one(out[-1], v))
    return out


def back_substitute(
    history: Sequence[LinearSystem],
    variables: Sequence[str],
    val: Mapping[Atom, float],
    rates: Mapping[str, float],
) -> dict[str, float] | None:
    """Extend a point of the projected system to the eliminated variables.

    Walks the elimination in reverse, choosing each variable inside the
    interval its rows allow. Returns None if an interval is empty.
    """
    point = dict(rates)
    for sys, var in reversed(list(zip(history[:-1], variables))):
        lo, hi = -math.inf, math.inf
        for r in sys.rows:
            c = float(r.coef(var))
            if c == 0:
                continue
            rest = Row(tuple((s, k) for s, k in r.coeffs if s != var), r.const)
            v = rest.value(val, point)
            bound = -v / c
            if c > 0:
                lo = max(lo, bound)
            else:
                hi = min(hi, bound)
        if lo > hi + SLACK_TOL:
            return None
        if math.isinf(lo) and math.isinf(hi):
            point[var] = 0.0
        elif math.isinf(lo):
            point[var] = hi
        elif math.isinf(hi):
            point[var] = lo
        else:
            point[var] = 0.5 * (lo + hi)
    return point


@dataclass(frozen=True)
class Evaluation:
    ok: bool
    slacks: tuple[float, ...]

    def __bool__(self) -> bool:
        return self.ok


def evaluate(sys: LinearSystem, val: Mapping[Atom, float], rates: Mapping[str, float]) -> Evaluation:
    """Substitute atom values and rates; a row holds when its slack >= -1e-9."""
    slacks = tuple(r.value(val, rates) for r in sys.rows)
    return Evaluation(all(s >= -SLACK_TOL for s in slacks), slacks)


# ---------------------------------------------------------------- valuations


AtomValuation = dict


def _expand(names: tuple[str, ...], joint) -> list[str]:
    # a pair of legitimate outputs stands in for the single symbol Yt
    out = []
    for n in names:
        if n == "Yt" and not joint.has("Yt") and joint.has("Yt1"):
            out += ["Yt1", "Yt2"]
        else:
            out.append(n)
    return out


def valuation_from_joint(joint, atoms: Iterable[Atom]) -> AtomValuation:
    """Entropies of ``joint`` (a JointPmf or BlockJoint) for each atom, in bits."""
    out = {}
    for a in atoms:
        na, nb = _expand(a.a, joint), _expand(a.b, joint)
        if hasattr(joint, "joint_entropy"):
            h = joint.joint_entropy(na + nb) - (joint.joint_entropy(nb) if nb else 0.0)
            out[a] = max(h, 0.0)
        else:
            out[a] = pc.entropy(joint, na, nb)
    return out


FIXTURES = ("inner_system", "crib_system", "inner_region", "crib_region")


def load_fixture(name: str) -> LinearSystem:
    """One of the shipped systems in :data:`FIXTURES`."""
    if name not in FIXTURES:
        raise ParseError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    text = resources.files("secoord").joinpath("data", name + ".txt").read_text()
    return parse_system(text)


def pmf_sampler(kind) -> Callable[[np.random.Generator, set[Atom]], AtomValuation]:
    """Valuations from random binary factorizations with trivial T.

    Half of the draws use nearly uninformative U kernels so that the link
    conditions often hold and the rate region is nonempty.
    """
    from .factorize import random_factorization

    def sample(rng: np.random.Generator, atoms: set[Atom]) -> AtomValuation:
        weak = rng.random() < 0.5
        cert = random_factorization(
            kind, rng, legit="single", u_concentrations=(10.0, 100.0) if weak else (0.1, 1.0, 10.0)
        )
        return valuation_from_joint(cert.blocks(), atoms)

    return sample


@dataclass(frozen=True)
class EquivalenceVerdict:
    equivalent: bool
    trials: int
    grid_points: int
    feasible_trials: int
    counterexample: dict | None = None


def _grid(val: Mapping[Atom, float], systems: Sequence[LinearSystem], step: float) -> np.ndarray:
    h_max = 1.0
    for s in systems:
        for r in s.rows:
            part = abs(float(r.const)) + sum(abs(float(c)) * val[a] for a, c in r.atoms.items())
            h_max = max(h_max, part)
    return np.arange(0.0, h_max + step / 2, step)


def _member(sys: LinearSystem, val, r01: np.ndarray, r02: np.ndarray, tol: float) -> np.ndarray:
    ok = np.ones(r01.shape, dtype=bool)
    for r in sys.rows:
        base = float(r.const) + sum(float(c) * val[a] for a, c in r.atoms.items())
        rates = r.rates
        extra = set(rates) - {"R01", "R02"}
        if extra:
            raise MissingAtom(f"rates {sorted(extra)} left in system")
        slack = base + float(rates.get("R01", 0)) * r01 + float(rates.get("R02", 0)) * r02
        ok &= slack >= -tol
    return ok


def equivalence_check(
    sys_a: LinearSystem,
    sys_b: LinearSystem,
    sampler: Callable[[np.random.Generator, set[Atom]], AtomValuation],
    trials: int,
    tol: float = SLACK_TOL,
    seed: int = 0,
    step: float = GRID_STEP,
) -> EquivalenceVerdict:
    """Compare the feasible (R01, R02) sets of two systems on a rate grid.

    Each trial draws a valuation from ``sampler`` (seeded per trial) and
    checks grid points ``step`` apart over ``[0, H_max]^2``. Returns the
    first disagreement found.
    """
    atoms = sys_a.atoms | sys_b.atoms
    points = feasible = 0
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        val = sampler(rng, atoms)
        g = _grid(val, (sys_a, sys_b), step)
        r01, r02 = np.meshgrid(g, g, indexing="ij")
        in_a = _member(sys_a, val, r01, r02, tol)
        in_b = _member(sys_b, val, r01, r02, tol)
        points += in_a.size
        feasible += int(in_a.any() or in_b.any())
        bad = np.argwhere(in_a != in_b)
        if bad.size:
            i0, j0 = bad[0]
            return EquivalenceVerdict(
                False, i + 1, points, feasible,
                {
                    "trial": i,
                    "R01": float(r01[i0, j0]),
                    "R02": float(r02[i0, j0]),
                    "in_a": bool(in_a[i0, j0]),
                    "in_b": bool(in_b[i0, j0]),
                    "valuation": {str(a): v for a, v in val.items()},
                },
            )
    return EquivalenceVerdict(True, trials, points, feasible)
