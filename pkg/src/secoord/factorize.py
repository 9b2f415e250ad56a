"""Assemble the joint pmfs used by the coordination regions.

A factorization is a target ``q`` over (X1, X2, W, Y), a time-sharing pmf
over T and a set of conditional kernels keyed by role. Every kind splits
into a *U-block* (sources, coordination auxiliaries, output Y) and a
*channel block* (wiretap-code auxiliaries, channel inputs and outputs) that
are conditionally independent given T. ``BlockJoint`` exploits this to
evaluate entropies without materializing the full table.

Variable names are fixed: ``X1 X2 W Y T U1 U2 V1 V2 Xt1 Xt2 Zt`` plus the
legitimate channel output, either ``Yt`` or the pair ``Yt1 Yt2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

import numpy as np

from . import probcore as pc
from .errors import (
    AlphabetMismatch,
    InputError,
    MissingFactor,
    SourcesNotConditionallyIndependent,
    UnknownVariable,
)
from .probcore import ChannelKernel, JointPmf

CI_TOL = 1e-9
LEGIT_NAMES = ("Yt", "Yt1", "Yt2")
SOURCE_NAMES = ("X1", "X2", "W")
TARGET_NAMES = ("X1", "X2", "W", "Y")


class Kind(str, Enum):
    INNER = "InnerThm1"
    OUTER = "OuterThm2"
    THM3 = "TightThm3"
    CRIB = "CribThm4"

    @classmethod
    def parse(cls, text: str) -> "Kind":
        aliases = {"inner": cls.INNER, "outer": cls.OUTER, "thm3": cls.THM3, "crib": cls.CRIB}
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise InputError(f"unknown factorization kind {text!r}") from None


# role -> (outputs, inputs); "channel" is checked separately because its
# legitimate outputs may be one variable or a pair.
_ROLES: dict[Kind, dict[str, tuple[tuple[str, ...], frozenset[str]]]] = {
    Kind.INNER: {
        "U1": (("U1",), frozenset({"X1", "T"})),
        "U2": (("U2",), frozenset({"X2", "T"})),
        "V1": (("V1",), frozenset({"T"})),
        "Xt1": (("Xt1",), frozenset({"V1", "T"})),
        "V2": (("V2",), frozenset({"T"})),
        "Xt2": (("Xt2",), frozenset({"V2", "T"})),
    },
    Kind.CRIB: {
        "U2": (("U2",), frozenset({"X2", "T"})),
        "U1": (("U1",), frozenset({"X1", "U2", "T"})),
        "V2": (("V2",), frozenset({"T"})),
        "Xt2": (("Xt2",), frozenset({"V2", "T"})),
        "V1": (("V1",), frozenset({"Xt2", "T"})),
        "Xt1": (("Xt1",), frozenset({"V1", "Xt2", "T"})),
    },
    Kind.THM3: {
        "U1": (("U1",), frozenset({"X1", "T"})),
        "U2": (("U2",), frozenset({"X2", "T"})),
        "Xt1": (("Xt1",), frozenset({"T"})),
        "Xt2": (("Xt2",), frozenset({"T"})),
    },
    Kind.OUTER: {
        "U": (("U1", "U2"), frozenset({"X1", "X2", "T"})),
        "Xt": (("Xt1", "Xt2"), frozenset({"T"})),
    },
}
_DECODER = (("Y",), frozenset({"U1", "U2", "W", "T"}))
U_ROLES = {"U1", "U2", "U"}


def required_roles(kind: Kind) -> tuple[str, ...]:
    return tuple(_ROLES[kind]) + ("channel", "decoder")


def _check_role(role: str, k: ChannelKernel, outs: tuple[str, ...], ins: frozenset[str]) -> None:
    if set(k.output_names) != set(outs) or set(k.input_names) != set(ins):
        raise AlphabetMismatch(
            f"factor {role!r} must be p({','.join(outs)}|{','.join(sorted(ins))}), got {k!r}"
        )


def _check_channel(kind: Kind, k: ChannelKernel) -> None:
    if set(k.input_names) != {"Xt1", "Xt2"}:
        raise AlphabetMismatch(f"channel inputs must be Xt1, Xt2, got {k!r}")
    outs = set(k.output_names)
    if "Zt" not in outs:
        raise AlphabetMismatch("channel must produce the eavesdropper output Zt")
    legit = outs - {"Zt"}
    if kind is Kind.THM3:
        if legit != {"Yt1", "Yt2"}:
            raise AlphabetMismatch("deterministic-link channel must output Yt1, Yt2, Zt")
    elif legit not in ({"Yt"}, {"Yt1", "Yt2"}):
        raise AlphabetMismatch(f"channel legitimate output must be Yt or Yt1,Yt2; got {legit}")


def validate_factors(kind: Kind, factors: Mapping[str, ChannelKernel]) -> None:
    needed = required_roles(kind)
    missing = [r for r in needed if r not in factors]
    if missing:
        raise MissingFactor(f"{kind.value} needs factors {missing}")
    extra = [r for r in factors if r not in needed]
    if extra:
        raise MissingFactor(f"{kind.value} does not take factors {extra}")
    for role, (outs, ins) in _ROLES[kind].items():
        _check_role(role, factors[role], outs, ins)
    _check_role("decoder", factors["decoder"], *_DECODER)
    _check_channel(kind, factors["channel"])


def _sources(q: JointPmf, t: JointPmf) -> JointPmf:
    for name in TARGET_NAMES:
        if not q.has(name):
            raise UnknownVariable(f"target must contain {name}")
    if t.names != ("T",):
        raise UnknownVariable("time-sharing pmf must be over the single variable T")
    return pc.product(t, pc.marginal(q, SOURCE_NAMES))


def _chain_roles(p: JointPmf, factors: Mapping[str, ChannelKernel], roles) -> JointPmf:
    for role in roles:
        p = pc.chain(p, factors[role])
    return p


def _u_roles(kind: Kind) -> list[str]:
    return [r for r in _ROLES[kind] if r in U_ROLES]


def _v_roles(kind: Kind) -> list[str]:
    return [r for r in _ROLES[kind] if r not in U_ROLES]


def check_sources_ci(q: JointPmf) -> float:
    ci = pc.mutual_info(q, ["X1"], ["X2"], ["W"])
    if ci > CI_TOL:
        raise SourcesNotConditionallyIndependent(f"I(X1;X2|W) = {ci:.3g} > {CI_TOL}")
    return ci


def _build(kind: Kind, q: JointPmf, t: JointPmf, factors: Mapping[str, ChannelKernel]) -> JointPmf:
    validate_factors(kind, factors)
    if kind is Kind.THM3:
        check_sources_ci(q)
    p = _sources(q, t)
    p = _chain_roles(p, factors, _u_roles(kind) + _v_roles(kind) + ["channel", "decoder"])
    return p


def build_inner(q: JointPmf, t: JointPmf, factors: Mapping[str, ChannelKernel]) -> JointPmf:
    """Joint for the general inner bound (product channel-input code layers)."""
    return _build(Kind.INNER, q, t, factors)


def build_crib(q: JointPmf, t: JointPmf, factors: Mapping[str, ChannelKernel]) -> JointPmf:
    """Joint for the cribbing inner bound (encoder 1 sees U2 and Xt2)."""
    return _build(Kind.CRIB, q, t, factors)


def build_thm3(q: JointPmf, t: JointPmf, factors: Mapping[str, ChannelKernel]) -> JointPmf:
    """Joint for the deterministic-link region; needs X1 ⫫ X2 given W."""
    return _build(Kind.THM3, q, t, factors)


def build_outer(q: JointPmf, t: JointPmf, factors: Mapping[str, ChannelKernel]) -> JointPmf:
    """Joint for the outer bound (joint auxiliaries and correlated inputs)."""
    return _build(Kind.OUTER, q, t, factors)


BUILDERS = {
    Kind.INNER: build_inner,
    Kind.CRIB: build_crib,
    Kind.THM3: build_thm3,
    Kind.OUTER: build_outer,
}


class BlockJoint:
    """Entropy oracle for a joint whose two blocks are independent given T.

    ``u`` holds (T, X1, X2, W, U..., Y) and ``v`` holds T with the channel
    variables. For sets straddling both blocks,
    H(A, B, T) = H(A, T) + H(B, T) - H(T); sets without T are mixed over T
    explicitly.
    """

    def __init__(self, u: JointPmf, v: JointPmf):
        if not (u.has("T") and v.has("T")):
            raise UnknownVariable("both blocks must carry T")
        if set(u.names) & set(v.names) != {"T"}:
            raise AlphabetMismatch("blocks may share only T")
        self.u = u
        self.v = v
        self._cache: dict[frozenset[str], float] = {}

    @property
    def names(self) -> tuple[str, ...]:
        return self.u.names + tuple(n for n in self.v.names if n != "T")

    def has(self, name: str) -> bool:
        return self.u.has(name) or self.v.has(name)

    def alphabet(self, name: str) -> pc.Alphabet:
        return self.u.alphabet(name) if self.u.has(name) else self.v.alphabet(name)

    def joint_entropy(self, names) -> float:
        key = frozenset(names)
        if key in self._cache:
            return self._cache[key]
        for n in key:
            if not self.has(n):
                raise UnknownVariable(f"variable {n!r} not in blocks")
        a = sorted(n for n in key if self.u.has(n))
        b = sorted(n for n in key if n not in a)
        if not b:
            h = pc.joint_entropy(self.u, a)
        elif not a or a == ["T"]:
            h = pc.joint_entropy(self.v, sorted(set(b) | set(a)))
        elif "T" not in key and self.u.alphabet("T").size > 1:
            # mix over T explicitly: p(a, b) = sum_t p(t, a) p(t, b) / p(t)
            pt = pc.marginal(self.u, ["T"]).probs
            pa = pc.marginal(self.u, ["T"] + a).probs.reshape(pt.size, -1)
            pb = pc.marginal(self.v, ["T"] + b).probs.reshape(pt.size, -1)
            inv = np.where(pt > 0, 1.0 / np.where(pt > 0, pt, 1.0), 0.0)
            pab = np.einsum("ta,tb->ab", pa, pb * inv[:, None])
            pos = pab[pab > 0]
            h = float(-np.dot(pos, np.log2(pos)))
        else:
            at = sorted(set(a) | {"T"})
            bt = sorted(set(b) | {"T"})
            h = (
                pc.joint_entropy(self.u, at)
                + pc.joint_entropy(self.v, bt)
                - pc.joint_entropy(self.u, ["T"])
            )
        self._cache[key] = h
        return h


@dataclass(frozen=True, eq=False)
class AuxiliaryFactorization:
    """A complete factorization certificate of one of the four kinds."""

    kind: Kind
    t_dist: JointPmf
    factors: Mapping[str, ChannelKernel]
    target: JointPmf

    def __post_init__(self) -> None:
        validate_factors(self.kind, self.factors)
        if self.kind is Kind.THM3:
            check_sources_ci(self.target)

    def assemble(self) -> JointPmf:
        return BUILDERS[self.kind](self.target, self.t_dist, self.factors)

    def blocks(self) -> BlockJoint:
        base = _sources(self.target, self.t_dist)
        u = _chain_roles(base, self.factors, _u_roles(self.kind) + ["decoder"])
        v = _chain_roles(self.t_dist, self.factors, _v_roles(self.kind) + ["channel"])
        return BlockJoint(u, v)

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "t_dist": pc.pmf_to_json(self.t_dist),
            "factors": {r: pc.kernel_to_json(self.factors[r]) for r in required_roles(self.kind)},
            "target": pc.pmf_to_json(self.target),
        }

    def serialized(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj: Any) -> "AuxiliaryFactorization":
        try:
            kind = Kind.parse(obj["kind"])
            t = pc.pmf_from_json(obj["t_dist"])
            factors = {r: pc.kernel_from_json(k) for r, k in obj["factors"].items()}
            q = pc.pmf_from_json(obj["target"])
        except (KeyError, TypeError, AttributeError) as exc:
            raise InputError("factorization needs kind, t_dist, factors, target") from exc
        return cls(kind, t, factors, q)


def check_target(joint: JointPmf | BlockJoint, q: JointPmf) -> float:
    """Largest TV distance between p(x1, x2, w, y | t) and q over t with p(t) > 0."""
    base = joint.u if isinstance(joint, BlockJoint) else joint
    names = q.names
    pt = pc.marginal(base, ["T"]).probs
    cond = pc.marginal(base, ("T",) + names).probs
    worst = 0.0
    for t, w in enumerate(pt):
        if w <= 0:
            continue
        tv = 0.5 * float(np.abs(cond[t] / w - q.probs).sum())
        worst = max(worst, tv)
    return min(worst, 1.0)


def uniform_t(size: int) -> JointPmf:
    return pc.make_joint([pc.Alphabet.of_size("T", size)], np.full(size, 1.0 / size))


CONCENTRATIONS = (0.1, 1.0, 10.0)


def _random_kernel(rng: np.random.Generator, ins, outs, choices=CONCENTRATIONS) -> ChannelKernel:
    ins, outs = list(ins), list(outs)
    n_out = int(np.prod([a.size for a in outs]))
    n_in = int(np.prod([a.size for a in ins], dtype=np.int64))
    alpha = float(rng.choice(choices))
    rows = rng.dirichlet(np.full(n_out, alpha), size=n_in)
    rows = np.maximum(rows, 0.0)
    rows /= rows.sum(axis=1, keepdims=True)
    return pc.make_kernel(ins, outs, rows.reshape([a.size for a in ins + outs]))


def _random_channel(
    rng: np.random.Generator, kind: Kind, xt1, xt2, z_size: int, legit: str | None
) -> ChannelKernel:
    """Legitimate links noiseless half of the time; the eavesdropper is random."""
    s1, s2 = xt1.size, xt2.size
    zt = pc.Alphabet.of_size("Zt", z_size)
    eve = rng.dirichlet(np.full(z_size, float(rng.choice(CONCENTRATIONS))), size=(s1, s2))
    pair = rng.random() < 0.5 if legit is None else legit == "pair"
    pair = pair or kind is Kind.THM3
    if pair:
        outs = [pc.Alphabet.of_size("Yt1", s1), pc.Alphabet.of_size("Yt2", s2), zt]
        f1 = np.arange(s1) if rng.random() < 0.5 else rng.integers(0, s1, size=s1)
        f2 = np.arange(s2) if rng.random() < 0.5 else rng.integers(0, s2, size=s2)
        table = np.zeros((s1, s2, s1, s2, z_size))
        for a in range(s1):
            for b in range(s2):
                table[a, b, f1[a], f2[b]] = eve[a, b]
        if kind is not Kind.THM3 and rng.random() < 0.5:
            # noisy links: blur the legitimate pair
            noise = rng.dirichlet(np.ones(s1 * s2), size=(s1, s2)).reshape(s1, s2, s1, s2)
            table = noise[..., None] * eve[:, :, None, None, :]
    else:
        outs = [pc.Alphabet.of_size("Yt", s1 * s2), zt]
        if rng.random() < 0.5:
            legit = np.eye(s1 * s2).reshape(s1, s2, s1 * s2)
        else:
            legit = rng.dirichlet(np.full(s1 * s2, float(rng.choice(CONCENTRATIONS))), size=(s1, s2))
        table = legit[..., None] * eve[:, :, None, :]
    return pc.make_kernel([xt1, xt2], outs, table)


def random_factorization(
    kind: Kind | str,
    rng: np.random.Generator,
    size: int = 2,
    t_size: int = 1,
    z_size: int = 2,
    legit: str | None = None,
    u_concentrations: Sequence[float] = CONCENTRATIONS,
) -> AuxiliaryFactorization:
    """Random certificate of the given kind with ``size``-ary alphabets.

    Kernels draw their rows from Dirichlet laws whose concentration is
    picked from {0.1, 1, 10}, so near-deterministic and near-uniform
    factors both occur. Deterministic-link factorizations get sources that
    are conditionally independent given W. ``legit`` forces the
    legitimate output to be one variable ``Yt`` ("single") or the pair
    ``Yt1, Yt2`` ("pair"); ``u_concentrations`` overrides the choices for
    the U kernels.
    """
    kind = Kind.parse(kind) if isinstance(kind, str) else kind
    a = {n: pc.Alphabet.of_size(n, size) for n in ("X1", "X2", "W", "Y", "U1", "U2", "V1", "V2", "Xt1", "Xt2")}
    t = pc.Alphabet.of_size("T", t_size)
    if kind is Kind.THM3:
        pw = rng.dirichlet(np.ones(size))
        p1 = rng.dirichlet(np.ones(size), size=size)
        p2 = rng.dirichlet(np.ones(size), size=size)
        py = rng.dirichlet(np.ones(size), size=(size, size, size))
        table = np.einsum("w,wa,wb,abwy->abwy", pw, p1, p2, py)
    else:
        table = rng.dirichlet(np.ones(size**4)).reshape((size,) * 4)
    q = pc.make_joint([a["X1"], a["X2"], a["W"], a["Y"]], table)
    factors: dict[str, ChannelKernel] = {}
    for role, (outs, ins) in _ROLES[kind].items():
        order = [n for n in ("X1", "X2", "U2", "V1", "V2", "Xt2") if n in ins] + ["T"]
        choices = u_concentrations if role in U_ROLES else CONCENTRATIONS
        factors[role] = _random_kernel(
            rng, [t if n == "T" else a[n] for n in order], [a[n] for n in outs], choices
        )
    factors["channel"] = _random_channel(rng, kind, a["Xt1"], a["Xt2"], z_size, legit)
    factors["decoder"] = _random_kernel(rng, [a["U1"], a["U2"], a["W"], t], [a["Y"]])
    t_dist = pc.make_joint([t], rng.dirichlet(np.ones(t_size)))
    return AuxiliaryFactorization(kind, t_dist, factors, q)
