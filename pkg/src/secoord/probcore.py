"""Finite-alphabet probability tables and information measures.

All quantities are in bits. Tables are dense numpy arrays, one axis per
variable, and every object is immutable once built. The convention
``0 log 0 = 0`` is used throughout.

Examples
--------
>>> bit = Alphabet("X", ("0", "1"))
>>> p = make_joint([bit], [0.25, 0.75])
>>> round(entropy(p, ["X"]), 10)
0.8112781245
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import (
    AlphabetMismatch,
    DimensionMismatch,
    InputError,
    NegativeProbability,
    NotNormalized,
    TableTooLarge,
    UnknownVariable,
    VariableCollision,
)

NORM_TOL = 1e-12
IDENTITY_TOL = 1e-10
MAX_ENTRIES = 10**8

VarSet = Sequence[str]


@dataclass(frozen=True)
class Alphabet:
    """A named finite alphabet with ordered, distinct symbol labels."""

    name: str
    symbols: tuple[str, ...]

    def __post_init__(self) -> None:
        syms = tuple(str(s) for s in self.symbols)
        if not self.name or not str(self.name).isidentifier():
            raise DimensionMismatch(f"invalid variable name {self.name!r}")
        if len(syms) < 1:
            raise DimensionMismatch(f"alphabet {self.name} is empty")
        if len(set(syms)) != len(syms):
            raise DimensionMismatch(f"alphabet {self.name} has repeated symbols")
        object.__setattr__(self, "symbols", syms)

    @property
    def size(self) -> int:
        return len(self.symbols)

    @classmethod
    def of_size(cls, name: str, size: int) -> "Alphabet":
        return cls(name, tuple(str(i) for i in range(size)))

    def renamed(self, name: str) -> "Alphabet":
        return Alphabet(name, self.symbols)


def _check_size(shape: Iterable[int]) -> None:
    total = 1
    for s in shape:
        total *= int(s)
    if total > MAX_ENTRIES:
        raise TableTooLarge(f"table with {total} entries exceeds cap {MAX_ENTRIES}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _unique_names(alphabets: Sequence[Alphabet]) -> None:
    names = [a.name for a in alphabets]
    if len(set(names)) != len(names):
        raise VariableCollision(f"repeated variable names in {names}")


@dataclass(frozen=True, eq=False)
class JointPmf:
    """Joint pmf over an ordered list of alphabets."""

    variables: tuple[Alphabet, ...]
    probs: np.ndarray

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.variables)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.variables)

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownVariable(f"variable {name!r} not in {self.names}") from None

    def alphabet(self, name: str) -> Alphabet:
        return self.variables[self.axis(name)]

    def has(self, name: str) -> bool:
        return name in self.names

    def __repr__(self) -> str:
        return f"JointPmf({', '.join(self.names)})"


@dataclass(frozen=True, eq=False)
class ChannelKernel:
    """Conditional pmf p(outputs | inputs).

    ``probs`` has one axis per input followed by one axis per output.
    ``arbitrary`` marks input tuples whose row was filled in because the
    conditioning event had zero probability.
    """

    inputs: tuple[Alphabet, ...]
    outputs: tuple[Alphabet, ...]
    probs: np.ndarray
    arbitrary: np.ndarray | None = field(default=None)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.inputs)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.outputs)

    def rows(self) -> np.ndarray:
        """Rows as a 2-D array (input tuples by output tuples)."""
        n_in = int(np.prod([a.size for a in self.inputs], dtype=np.int64))
        return self.probs.reshape(n_in, -1)

    def is_deterministic(self, tol: float = NORM_TOL) -> bool:
        rows = self.rows()
        return bool(np.all(np.abs(rows.max(axis=1) - 1.0) <= tol))

    def __repr__(self) -> str:
        ins = ",".join(self.input_names)
        outs = ",".join(self.output_names)
        return f"ChannelKernel({outs}|{ins})"


def _validate_table(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NegativeProbability(f"{what} has non-finite entries")
    if np.any(arr < 0):
        raise NegativeProbability(f"{what} has negative entries (min {arr.min()!r})")


def make_joint(alphabets: Sequence[Alphabet], probs: Any) -> JointPmf:
    """Validate and wrap a probability table.

    ``probs`` may be nested or flat (row-major); it must sum to one within
    ``1e-12``.
    """
    alphabets = tuple(alphabets)
    _unique_names(alphabets)
    shape = tuple(a.size for a in alphabets)
    _check_size(shape)
    arr = np.asarray(probs, dtype=np.float64)
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise DimensionMismatch(f"table has {arr.size} entries, alphabets need {shape}")
    if arr.ndim != len(shape) or arr.shape != shape:
        if arr.ndim not in (0, 1):
            raise DimensionMismatch(f"table shape {arr.shape} does not match {shape}")
        arr = arr.reshape(shape)
    _validate_table(arr, "pmf")
    total = float(arr.sum())
    if abs(total - 1.0) > NORM_TOL:
        raise NotNormalized(f"pmf sums to {total!r}")
    return JointPmf(alphabets, _frozen(arr))


def make_kernel(
    inputs: Sequence[Alphabet], outputs: Sequence[Alphabet], probs: Any
) -> ChannelKernel:
    """Validate a conditional table; every row must be a pmf within 1e-12."""
    inputs, outputs = tuple(inputs), tuple(outputs)
    _unique_names(inputs + outputs)
    if not outputs:
        raise DimensionMismatch("kernel needs at least one output")
    shape = tuple(a.size for a in inputs + outputs)
    _check_size(shape)
    arr = np.asarray(probs, dtype=np.float64)
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise DimensionMismatch(f"kernel has {arr.size} entries, alphabets need {shape}")
    arr = arr.reshape(shape)
    _validate_table(arr, "kernel")
    kernel = ChannelKernel(inputs, outputs, _frozen(arr))
    sums = kernel.rows().sum(axis=1)
    if np.any(np.abs(sums - 1.0) > NORM_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise NotNormalized(f"kernel row off by {worst!r}")
    return kernel


def deterministic_kernel(
    inputs: Sequence[Alphabet], output: Alphabet, fn: Callable[..., int]
) -> ChannelKernel:
    """Kernel putting mass one on ``fn(*input_indices)`` (an output index)."""
    inputs = tuple(inputs)
    shape = tuple(a.size for a in inputs)
    table = np.zeros(shape + (output.size,))
    for idx in np.ndindex(*shape) if shape else [()]:
        table[idx + (int(fn(*idx)),)] = 1.0
    return make_kernel(inputs, [output], table)


def identity_kernel(source: Alphabet, output_name: str) -> ChannelKernel:
    return deterministic_kernel([source], source.renamed(output_name), lambda i: i)


def pmf_kernel(output: Alphabet, probs: Any) -> ChannelKernel:
    """Kernel with no inputs, i.e. a plain pmf usable with ``chain``."""
    return make_kernel([], [output], probs)


def _derived_joint(variables: Sequence[Alphabet], table: np.ndarray) -> JointPmf:
    # Results of exact operations on validated inputs: only guard against
    # accumulated rounding beyond the derived-identity tolerance.
    total = float(table.sum())
    if abs(total - 1.0) > 1e-9:
        raise NotNormalized(f"derived table sums to {total!r}")
    return JointPmf(tuple(variables), _frozen(table))


def _names_of(vs: VarSet | str) -> tuple[str, ...]:
    if isinstance(vs, str):
        return (vs,)
    return tuple(vs)


def _axes(p: JointPmf, names: Iterable[str]) -> list[int]:
    return [p.axis(n) for n in names]


def marginal(p: JointPmf, keep: VarSet) -> JointPmf:
    """Sum out every variable not in ``keep``; result follows ``keep``'s order."""
    keep = _names_of(keep)
    if len(set(keep)) != len(keep):
        raise VariableCollision(f"repeated names in {keep}")
    axes = _axes(p, keep)
    drop = tuple(i for i in range(len(p.variables)) if i not in axes)
    table = p.probs.sum(axis=drop) if drop else p.probs
    kept_sorted = sorted(axes)
    order = [kept_sorted.index(a) for a in axes]
    table = np.transpose(table, order) if order else table
    return _derived_joint([p.variables[a] for a in axes], np.asarray(table))


def _broadcast_kernel(p: JointPmf, k: ChannelKernel) -> np.ndarray:
    """Kernel table reshaped to broadcast against ``p.probs[..., None...]``."""
    pos = []
    for a in k.inputs:
        i = p.axis(a.name)
        if p.variables[i] != a:
            raise AlphabetMismatch(f"kernel input {a.name} alphabet differs from pmf")
        pos.append(i)
    n_in = len(k.inputs)
    order = sorted(range(n_in), key=lambda j: pos[j])
    table = np.transpose(k.probs, order + list(range(n_in, n_in + len(k.outputs))))
    shape = [1] * len(p.variables) + [a.size for a in k.outputs]
    for j in range(n_in):
        shape[pos[j]] = k.inputs[j].size
    return table.reshape(shape)


def chain(p: JointPmf, k: ChannelKernel) -> JointPmf:
    """Extend ``p`` by the outputs of ``k``: p(...)·k(outputs | inputs)."""
    for a in k.outputs:
        if p.has(a.name):
            raise VariableCollision(f"kernel output {a.name} already in pmf")
    kt = _broadcast_kernel(p, k)
    _check_size(p.shape + tuple(a.size for a in k.outputs))
    table = p.probs.reshape(p.shape + (1,) * len(k.outputs)) * kt
    return _derived_joint(p.variables + k.outputs, table)


def product(p: JointPmf, q: JointPmf) -> JointPmf:
    """Independent product p ⊗ q."""
    return chain(p, ChannelKernel((), q.variables, q.probs))


def condition(p: JointPmf, target: VarSet, given: VarSet = ()) -> ChannelKernel:
    """Conditional kernel p(target | given).

    Rows for zero-probability conditioning events are set uniform and marked
    in ``arbitrary``.
    """
    target, given = _names_of(target), _names_of(given)
    if set(target) & set(given):
        raise VariableCollision("target and given overlap")
    joint = marginal(p, given + target).probs
    g_shape = joint.shape[: len(given)]
    t_size = int(np.prod(joint.shape[len(given):], dtype=np.int64))
    flat = joint.reshape(int(np.prod(g_shape, dtype=np.int64)), t_size)
    den = flat.sum(axis=1)
    zero = den <= 0
    rows = np.where(zero[:, None], 1.0 / t_size, flat / np.where(zero, 1.0, den)[:, None])
    rows = rows / rows.sum(axis=1, keepdims=True)
    kernel = ChannelKernel(
        tuple(p.alphabet(n) for n in given),
        tuple(p.alphabet(n) for n in target),
        _frozen(rows.reshape(joint.shape)),
        zero.reshape(g_shape) if np.any(zero) else None,
    )
    return kernel


def _plogp_sum(table: np.ndarray) -> float:
    t = table[table > 0]
    return float(-np.dot(t, np.log2(t)))


def joint_entropy(p: JointPmf, names: VarSet) -> float:
    """H(names) of the marginal; an empty set has entropy 0."""
    names = _names_of(names)
    if not names:
        return 0.0
    axes = set(_axes(p, names))
    drop = tuple(i for i in range(len(p.variables)) if i not in axes)
    table = p.probs.sum(axis=drop) if drop else p.probs
    return _plogp_sum(np.asarray(table))


def _clamp(x: float, what: str) -> float:
    if x < 0:
        if x >= -IDENTITY_TOL:
            return 0.0
        raise ArithmeticError(f"{what} evaluated to {x!r} < 0")
    return x


def entropy(p: JointPmf, a: VarSet, given: VarSet = ()) -> float:
    """H(A | given) in bits."""
    a, given = _names_of(a), _names_of(given)
    if not a:
        raise UnknownVariable("entropy needs a nonempty variable set")
    if set(a) & set(given):
        raise VariableCollision("entropy arguments overlap")
    h = joint_entropy(p, a + given) - joint_entropy(p, given)
    return _clamp(h, "conditional entropy")


def mutual_info(p: JointPmf, a: VarSet, b: VarSet, given: VarSet = ()) -> float:
    """I(A; B | given) in bits; values in [-1e-10, 0) are clamped to 0."""
    a, b, given = _names_of(a), _names_of(b), _names_of(given)
    if set(a) & set(b) or set(a) & set(given) or set(b) & set(given):
        raise VariableCollision("mutual information arguments overlap")
    mi = (
        joint_entropy(p, a + given)
        + joint_entropy(p, b + given)
        - joint_entropy(p, a + b + given)
        - joint_entropy(p, given)
    )
    return _clamp(mi, "mutual information")


def _same_space(p: JointPmf, q: JointPmf) -> None:
    if p.variables != q.variables:
        raise AlphabetMismatch(f"{p.names} vs {q.names}")


def total_variation(p: JointPmf, q: JointPmf) -> float:
    """Half the L1 distance."""
    _same_space(p, q)
    tv = 0.5 * float(np.abs(p.probs - q.probs).sum())
    return min(max(tv, 0.0), 1.0)


def kl_divergence(p: JointPmf, q: JointPmf) -> float:
    """D(p || q) in bits; ``math.inf`` when p is not absolutely continuous."""
    _same_space(p, q)
    pp, qq = p.probs.ravel(), q.probs.ravel()
    mask = pp > 0
    if np.any(qq[mask] <= 0):
        return math.inf
    d = float(np.dot(pp[mask], np.log2(pp[mask]) - np.log2(qq[mask])))
    return max(d, 0.0)


def pinsker_holds(p: JointPmf, q: JointPmf, tol: float = IDENTITY_TOL) -> bool:
    """Check KL ≥ (2 / ln 2)·TV² for one pair."""
    return kl_divergence(p, q) + tol >= (2.0 / math.log(2.0)) * total_variation(p, q) ** 2


# serialization ------------------------------------------------------------


def _alphabet_json(a: Alphabet) -> dict:
    return {"name": a.name, "symbols": list(a.symbols)}


def _alphabet_from(obj: Any) -> Alphabet:
    try:
        return Alphabet(str(obj["name"]), tuple(obj["symbols"]))
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad alphabet entry {obj!r}") from exc


def _flat(arr: np.ndarray) -> list[float]:
    return [float(x) for x in arr.ravel()]


def pmf_to_json(p: JointPmf) -> dict:
    return {"variables": [_alphabet_json(a) for a in p.variables], "probs": _flat(p.probs)}


def pmf_from_json(obj: Any) -> JointPmf:
    try:
        alphabets = [_alphabet_from(v) for v in obj["variables"]]
        probs = obj["probs"]
    except (KeyError, TypeError) as exc:
        raise InputError("pmf document needs 'variables' and 'probs'") from exc
    return make_joint(alphabets, probs)


def kernel_to_json(k: ChannelKernel) -> dict:
    return {
        "inputs": [_alphabet_json(a) for a in k.inputs],
        "outputs": [_alphabet_json(a) for a in k.outputs],
        "probs": _flat(k.probs),
    }


def kernel_from_json(obj: Any) -> ChannelKernel:
    try:
        ins = [_alphabet_from(v) for v in obj.get("inputs", [])]
        outs = [_alphabet_from(v) for v in obj["outputs"]]
        probs = obj["probs"]
    except (KeyError, TypeError, AttributeError) as exc:
        raise InputError("kernel document needs 'outputs' and 'probs'") from exc
    return make_kernel(ins, outs, probs)
