"""Numerical search for the smallest R01 over auxiliary factorizations.

Each restart runs Adam on softmax-parameterized kernel rows against

    max(R01 bounds) + lam * (residual + sum relu(rhs - lhs)),

where ``residual`` measures how far p(y | x1, x2, w, t) is from the target
and ``lam`` grows geometrically. The continuous point is then polished:
several snapped copies are made, the decoder is repaired by a linear
program so the target marginal holds exactly, and every copy is evaluated
in float64 numpy by the ordinary evaluators. Only copies that pass that
exact check can be returned, so a reported rate is always backed by a
certificate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import torch

from .. import probcore as pc
from ..errors import DimensionMismatch, DomainError, NoFeasiblePointFound
from ..factorize import TARGET_NAMES, AuxiliaryFactorization, Kind, check_target
from ..probcore import Alphabet, ChannelKernel, JointPmf
from .evaluate import EVALUATORS, RateConstraintSet, SlackReport, check_rate_pair

LN2 = math.log(2.0)
LOG_FLOOR = 1e-300

# role -> (inputs, outputs); inputs are listed in the order used for the
# kernel axes of every certificate this module produces.
LAYOUT: dict[Kind, dict[str, tuple[tuple[str, ...], tuple[str, ...]]]] = {
    Kind.INNER: {
        "U1": (("X1", "T"), ("U1",)),
        "U2": (("X2", "T"), ("U2",)),
        "V1": (("T",), ("V1",)),
        "Xt1": (("V1", "T"), ("Xt1",)),
        "V2": (("T",), ("V2",)),
        "Xt2": (("V2", "T"), ("Xt2",)),
    },
    Kind.CRIB: {
        "U2": (("X2", "T"), ("U2",)),
        "U1": (("X1", "U2", "T"), ("U1",)),
        "V2": (("T",), ("V2",)),
        "Xt2": (("V2", "T"), ("Xt2",)),
        "V1": (("Xt2", "T"), ("V1",)),
        "Xt1": (("V1", "Xt2", "T"), ("Xt1",)),
    },
    Kind.THM3: {
        "U1": (("X1", "T"), ("U1",)),
        "U2": (("X2", "T"), ("U2",)),
        "Xt1": (("T",), ("Xt1",)),
        "Xt2": (("T",), ("Xt2",)),
    },
    Kind.OUTER: {
        "U": (("X1", "X2", "T"), ("U1", "U2")),
        "Xt": (("T",), ("Xt1", "Xt2")),
    },
}
DECODER = (("U1", "U2", "W", "T"), ("Y",))
U_BLOCK_ROLES = ("U1", "U2", "U")


@dataclass(frozen=True)
class OptimizationBudget:
    """Search effort; results only improve as ``restarts`` grows."""

    restarts: int = 4
    iterations: int = 1200
    seed: int = 0
    steps: tuple[float, ...] = (0.1, 0.03, 0.01)
    penalty: tuple[float, float] = (1e2, 1e6)
    target_tol: float = 1e-8
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.restarts < 1 or self.iterations < 1 or self.jobs < 1:
            raise DimensionMismatch("restarts, iterations and jobs must be at least 1")
        if not self.steps or any(s <= 0 for s in self.steps):
            raise DimensionMismatch("step schedule must be a nonempty list of positive reals")


@dataclass(frozen=True, eq=False)
class RegionPoint:
    """Best certified rate point; R02 is reported as ``inf`` (unconstrained)."""

    rates: tuple[float, float]
    certificate: AuxiliaryFactorization
    constraints: RateConstraintSet
    residual: float
    slacks: SlackReport
    restart: int = -1

    def to_json(self, with_certificate: bool = True) -> dict:
        out = {
            "kind": self.certificate.kind.value,
            "R01": self.rates[0],
            "R02": "inf" if math.isinf(self.rates[1]) else self.rates[1],
            "residual": self.residual,
            "restart": self.restart,
            "feasible": bool(self.slacks.ok),
            "slacks": self.slacks.slacks,
            **self.constraints.to_json(),
        }
        if with_certificate:
            out["certificate"] = self.certificate.to_json()
        return out


def default_cards(kind: Kind | str, q: JointPmf, channel: ChannelKernel) -> dict[str, int]:
    """Alphabet sizes at the deterministic-link cardinality bounds."""
    kind = Kind.parse(kind) if isinstance(kind, str) else kind
    base = math.prod(q.alphabet(n).size for n in TARGET_NAMES)
    xt = {a.name: a.size for a in channel.inputs}
    cards = {"T": 3, "U1": base, "U2": base * base}
    if kind in (Kind.INNER, Kind.CRIB):
        cards.update(V1=xt["Xt1"], V2=xt["Xt2"])
    return cards


# ---------------------------------------------------------------- tensors


def _letters(names: Sequence[str], table: dict[str, str]) -> str:
    for n in names:
        if n not in table:
            table[n] = chr(ord("a") + len(table))
    return "".join(table[n] for n in names)


def _chain(xp, p, names: list[str], k, k_in: Sequence[str], k_out: Sequence[str]):
    """Multiply a kernel onto a table; works for numpy and torch alike."""
    table: dict[str, str] = {}
    sp_ = _letters(names, table)
    sk = _letters(list(k_in) + list(k_out), table)
    so = sp_ + _letters(k_out, table)
    return xp.einsum(f"{sp_},{sk}->{so}", p, k), names + list(k_out)


def _marginal(p, names: Sequence[str], keep: Sequence[str]):
    axes = tuple(i for i, n in enumerate(names) if n not in keep)
    return p.sum(dim=axes) if axes else p


def _torch_entropy(p) -> torch.Tensor:
    return -(p * torch.log(p.clamp_min(LOG_FLOOR))).sum() / LN2


class _TorchBlocks:
    """Differentiable twin of ``BlockJoint`` for the evaluators.

    Sets spanning both blocks must include T, which every evaluator query
    does; the general mixture over T is left to ``BlockJoint``.
    """

    def __init__(self, u, u_names, v, v_names, u_cache: dict | None = None):
        self.u, self.u_names = u, list(u_names)
        self.v, self.v_names = v, list(v_names)
        # entropies of a U-block held fixed across iterations
        self.u_cache = u_cache

    def has(self, name: str) -> bool:
        return name in self.u_names or name in self.v_names

    def _h(self, which: str, names) -> torch.Tensor:
        if which == "u" and self.u_cache is not None:
            key = frozenset(names)
            if key not in self.u_cache:
                self.u_cache[key] = _torch_entropy(_marginal(self.u, self.u_names, names))
            return self.u_cache[key]
        p, all_names = (self.u, self.u_names) if which == "u" else (self.v, self.v_names)
        return _torch_entropy(_marginal(p, all_names, names))

    def joint_entropy(self, names) -> torch.Tensor:
        a = {n for n in names if n in self.u_names}
        b = set(names) - a
        if not b:
            return self._h("u", a)
        if not a or a == {"T"}:
            return self._h("v", a | b)
        return self._h("u", a | {"T"}) + self._h("v", b | {"T"}) - self._h("u", {"T"})


# ---------------------------------------------------------------- problem


class _Problem:
    """Alphabets, fixed tensors and layout for one optimization instance."""

    def __init__(self, kind: Kind, q: JointPmf, channel: ChannelKernel, cards: Mapping[str, int]):
        self.kind = kind
        self.q = pc.marginal(q, TARGET_NAMES)
        self.channel = channel
        self.alpha: dict[str, Alphabet] = {n: self.q.alphabet(n) for n in TARGET_NAMES}
        for a in channel.inputs:
            self.alpha[a.name] = a
        for n, size in cards.items():
            self.alpha[n] = Alphabet.of_size(n, int(size))
        self.layout = dict(LAYOUT[kind])
        self.layout["decoder"] = DECODER
        self.u_roles = [r for r in LAYOUT[kind] if r in U_BLOCK_ROLES] + ["decoder"]
        self.v_roles = [r for r in LAYOUT[kind] if r not in U_BLOCK_ROLES]
        self.q_xw = pc.marginal(self.q, ("X1", "X2", "W")).probs
        qt = self.q.probs
        with np.errstate(invalid="ignore", divide="ignore"):
            self.q_y = np.where(self.q_xw[..., None] > 0, qt / self.q_xw[..., None], 0.0)
        self.chan_names = list(channel.input_names) + list(channel.output_names)

    def shape(self, role: str) -> tuple[int, ...]:
        ins, outs = self.layout[role]
        return tuple(self.alpha[n].size for n in ins + outs)

    def n_out(self, role: str) -> int:
        return math.prod(self.alpha[n].size for n in self.layout[role][1])

    # U-block conditional on (T, X1, X2, W): p(u..., y | t, x1, x2, w)
    def u_conditional(self, xp, kernels: Mapping[str, object]):
        n = ["T", "X1", "X2", "W"]
        shape = tuple(self.alpha[k].size for k in n)
        g = torch.ones(shape, dtype=torch.float64) if xp is torch else np.ones(shape)
        for role in self.u_roles:
            ins, outs = self.layout[role]
            g, n = _chain(xp, g, n, kernels[role], ins, outs)
        return g, n

    def u_block(self, xp, kernels, t):
        g, n = self.u_conditional(xp, kernels)
        qxw = torch.tensor(self.q_xw) if xp is torch else self.q_xw
        base = xp.einsum("a,bcd->abcd", t, qxw)
        idx = "abcd" + "".join(chr(ord("e") + i) for i in range(len(n) - 4))
        return xp.einsum(f"abcd,{idx}->{idx}", base, g), g, n

    def v_block(self, xp, kernels, t):
        p, n = t, ["T"]
        for role in self.v_roles:
            ins, outs = self.layout[role]
            p, n = _chain(xp, p, n, kernels[role], ins, outs)
        ch = torch.tensor(self.channel.probs) if xp is torch else self.channel.probs
        p, n = _chain(
            xp, p, n, ch, self.channel.input_names, self.channel.output_names
        )
        return p, n

    def certificate(self, t: np.ndarray, kernels: Mapping[str, np.ndarray]) -> AuxiliaryFactorization:
        factors = {}
        for role, (ins, outs) in self.layout.items():
            factors[role] = pc.make_kernel(
                [self.alpha[n] for n in ins], [self.alpha[n] for n in outs], kernels[role]
            )
        factors["channel"] = self.channel
        tpmf = pc.make_joint([self.alpha["T"]], t)
        return AuxiliaryFactorization(self.kind, tpmf, factors, self.q)


def _normalize_rows(arr: np.ndarray, n_out: int) -> np.ndarray:
    rows = np.clip(arr, 0.0, None).reshape(-1, n_out)
    sums = rows.sum(axis=1, keepdims=True)
    rows = np.where(sums > 0, rows / np.where(sums > 0, sums, 1.0), 1.0 / n_out)
    # a second pass pins the row sums to 1 within a few ulps
    rows = rows / rows.sum(axis=1, keepdims=True)
    return rows.reshape(arr.shape)


# ---------------------------------------------------------------- descent


def _init_logits(problem: _Problem, rng: np.random.Generator, alpha: float) -> dict[str, torch.Tensor]:
    out = {}
    for role in ["T"] + list(problem.layout):
        if role == "T":
            shape, n_out = (problem.alpha["T"].size,), problem.alpha["T"].size
        else:
            shape, n_out = problem.shape(role), problem.n_out(role)
        rows = rng.dirichlet(np.full(n_out, alpha), size=int(np.prod(shape)) // n_out)
        logits = np.log(np.clip(rows, 1e-12, None)).reshape(shape)
        out[role] = torch.tensor(logits, dtype=torch.float64, requires_grad=True)
    return out


def _softmax_kernels(problem: _Problem, logits) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    t = torch.softmax(logits["T"], dim=0)
    kernels = {}
    for role in problem.layout:
        shape = problem.shape(role)
        n_out = problem.n_out(role)
        flat = logits[role].reshape(-1, n_out)
        kernels[role] = torch.softmax(flat, dim=1).reshape(shape)
    return t, kernels


def _stack(values) -> torch.Tensor:
    return torch.stack([torch.as_tensor(v, dtype=torch.float64) for v in values])


def _loss_terms(problem: _Problem, t, kernels):
    u, g, un = problem.u_block(torch, kernels, t)
    v, vn = problem.v_block(torch, kernels, t)
    cset = EVALUATORS[problem.kind.value](_TorchBlocks(u, un, v, vn))
    r01 = [h.c for h in cset.rate_bounds if h.a == 1 and h.b == 0]
    objective = torch.clamp(torch.max(_stack(r01)), min=0.0)
    gaps = _stack([p.rhs - p.lhs for p in cset.feasibility]) if cset.feasibility else torch.zeros(1)
    violation = torch.relu(gaps).sum()
    keep = [i for i, n in enumerate(un) if n in ("T", "X1", "X2", "W", "Y")]
    axes = tuple(i for i in range(len(un)) if i not in keep)
    py = g.sum(dim=axes)  # (T, X1, X2, W, Y)
    diff = py - torch.tensor(problem.q_y)[None]
    residual = (torch.tensor(problem.q_xw)[None, ..., None] * diff**2).sum()
    return objective, residual, violation


def _descend(problem: _Problem, budget: OptimizationBudget, rng: np.random.Generator, alpha: float):
    logits = _init_logits(problem, rng, alpha)
    params = list(logits.values())
    opt = torch.optim.Adam(params, lr=budget.steps[0])
    lam0, lam1 = budget.penalty
    n = budget.iterations
    phase = max(1, math.ceil(n / len(budget.steps)))
    for it in range(n):
        lr = budget.steps[min(it // phase, len(budget.steps) - 1)]
        for grp in opt.param_groups:
            grp["lr"] = lr
        lam = lam0 * (lam1 / lam0) ** (it / max(1, n - 1))
        opt.zero_grad()
        t, kernels = _softmax_kernels(problem, logits)
        obj, res, viol = _loss_terms(problem, t, kernels)
        loss = obj + lam * (res + viol)
        loss.backward()
        opt.step()
    with torch.no_grad():
        t, kernels = _softmax_kernels(problem, logits)
    return t.numpy().copy(), {r: k.numpy().copy() for r, k in kernels.items()}


# ---------------------------------------------------------------- polish


def _zero_snap(arr: np.ndarray, n_out: int, thresh: float) -> np.ndarray:
    return _normalize_rows(np.where(arr < thresh, 0.0, arr), n_out)


def _rational_snap(arr: np.ndarray, n_out: int, denom: int = 12, tol: float = 1e-2) -> np.ndarray:
    out = arr.copy().reshape(-1)
    for i, x in enumerate(out):
        f = Fraction(float(x)).limit_denominator(denom)
        if abs(float(f) - x) <= tol:
            out[i] = float(f)
    return _normalize_rows(out.reshape(arr.shape), n_out)


def _grid_snap(arr: np.ndarray, n_out: int, step: int) -> np.ndarray:
    return _normalize_rows(np.round(arr * step) / step, n_out)


SNAPS = {
    "raw": lambda a, k: _normalize_rows(a, k),
    "zero1e-5": lambda a, k: _zero_snap(a, k, 1e-5),
    "zero1e-3": lambda a, k: _zero_snap(a, k, 1e-3),
    "rational": _rational_snap,
    "grid16": lambda a, k: _grid_snap(a, k, 16),
    "grid64": lambda a, k: _grid_snap(a, k, 64),
}


def repair_decoder(problem: _Problem, kernels: Mapping[str, np.ndarray]) -> np.ndarray:
    """Closest decoder (in L1) that reproduces q(y | x1, x2, w) for every t.

    Solved per (t, w) as a linear program over the (u1, u2) pairs that are
    reachable; rows of unreachable pairs are left unchanged. When the
    program is infeasible the current decoder is returned as is.
    """
    dec = np.array(kernels["decoder"], dtype=np.float64)  # (U1, U2, W, T, Y)
    u_only = {r: kernels[r] for r in problem.u_roles if r != "decoder"}
    n = ["T", "X1", "X2", "W"]
    g = np.ones(tuple(problem.alpha[k].size for k in n))
    for role in problem.u_roles[:-1]:
        ins, outs = problem.layout[role]
        g, n = _chain(np, g, n, u_only[role], ins, outs)
    # g axes: T X1 X2 W U1 U2 (order of appearance); bring to T W X1 X2 U1 U2
    order = [n.index(k) for k in ("T", "W", "X1", "X2", "U1", "U2")]
    g = np.transpose(g, order)
    n_t, n_w = g.shape[0], g.shape[1]
    nu1, nu2 = g.shape[4], g.shape[5]
    ny = dec.shape[-1]
    qxw = problem.q_xw  # X1 X2 W
    for ti in range(n_t):
        for wi in range(n_w):
            weights = qxw[:, :, wi]
            if weights.sum() <= 0:
                continue
            a = g[ti, wi].reshape(-1, nu1 * nu2)  # rows: (x1, x2)
            xs = np.flatnonzero(weights.reshape(-1) > 0)
            a = a[xs]
            reach = np.flatnonzero(a.sum(axis=0) > 0)
            if reach.size == 0:
                continue
            d0 = dec[:, :, wi, ti, :].reshape(nu1 * nu2, ny)[reach]
            qy = problem.q_y[:, :, wi, :].reshape(-1, ny)[xs]
            sol = _decoder_lp(a[:, reach], d0, qy)
            if sol is None:
                continue
            block = dec[:, :, wi, ti, :].reshape(nu1 * nu2, ny)
            block[reach] = sol
            dec[:, :, wi, ti, :] = block.reshape(nu1, nu2, ny)
    return _normalize_rows(dec, ny)


def _decoder_lp(a: np.ndarray, d0: np.ndarray, qy: np.ndarray) -> np.ndarray | None:
    nx, nu = a.shape
    ny = d0.shape[1]
    nd = nu * ny
    # variables: d (nu*ny, row-major u,y) then e (same)
    c = np.concatenate([np.zeros(nd), np.ones(nd)])
    rows_eq = []
    # marginal match: sum_u a[x,u] d[u,y] = qy[x,y]
    m1 = sp.kron(sp.csr_matrix(a), sp.identity(ny, format="csr"))
    rows_eq.append(sp.hstack([m1, sp.csr_matrix((nx * ny, nd))]))
    m2 = sp.kron(sp.identity(nu, format="csr"), sp.csr_matrix(np.ones((1, ny))))
    rows_eq.append(sp.hstack([m2, sp.csr_matrix((nu, nd))]))
    a_eq = sp.vstack(rows_eq).tocsr()
    b_eq = np.concatenate([qy.reshape(-1), np.ones(nu)])
    eye = sp.identity(nd, format="csr")
    a_ub = sp.vstack([sp.hstack([eye, -eye]), sp.hstack([-eye, -eye])]).tocsr()
    b_ub = np.concatenate([d0.reshape(-1), -d0.reshape(-1)])
    res = scipy.optimize.linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
        bounds=[(0, 1)] * nd + [(0, None)] * nd, method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        return None
    return res.x[:nd].reshape(nu, ny)


@dataclass(order=True)
class _Candidate:
    objective: float
    key: str
    point: RegionPoint = field(compare=False)


def _evaluate(problem: _Problem, cert: AuxiliaryFactorization, tol: float, restart: int) -> _Candidate | None:
    blocks = cert.blocks()
    residual = check_target(blocks, problem.q)
    if residual > tol:
        return None
    cset = EVALUATORS[cert.kind.value](blocks)
    if not cset.feasible:
        return None
    r01 = cset.min_r01()
    slacks = check_rate_pair(cset, r01, math.inf)
    point = RegionPoint((r01, math.inf), cert, cset, residual, slacks, restart)
    return _Candidate(r01, cert.serialized(), point)


def _u_residual(problem: _Problem, kernels: Mapping[str, np.ndarray]) -> float:
    g, n = problem.u_conditional(np, kernels)
    keep = [i for i, k in enumerate(n) if k in ("T", "X1", "X2", "W", "Y")]
    py = g.sum(axis=tuple(i for i in range(len(n)) if i not in keep))
    tv = 0.5 * np.abs(py - problem.q_y[None]).sum(axis=-1)
    return float(np.max(np.where(problem.q_xw[None] > 0, tv, 0.0)))


def _refine_v(problem: _Problem, t: np.ndarray, u_kernels, v_kernels, iterations: int = 300):
    """Re-optimize the channel-code kernels with the U-block held fixed.

    Near the uniform point the entropy terms have vanishing gradients, so
    the joint descent leaves the link predicates marginally violated; with
    the U-side exact, a short descent at a large fixed penalty fixes that.
    """
    tt = torch.tensor(t)
    with torch.no_grad():
        fixed = {r: torch.tensor(k) for r, k in u_kernels.items()}
        u, _, un = problem.u_block(torch, fixed, tt)
    cache: dict = {}
    logits = {
        r: torch.tensor(np.log(np.clip(k, 1e-12, None)), requires_grad=True)
        for r, k in v_kernels.items()
    }
    opt = torch.optim.Adam(list(logits.values()), lr=0.01)
    lam = 1e4

    def current():
        return {
            r: torch.softmax(lg.reshape(-1, problem.n_out(r)), dim=1).reshape(lg.shape)
            for r, lg in logits.items()
        }

    for _ in range(iterations):
        opt.zero_grad()
        v, vn = problem.v_block(torch, current(), tt)
        cset = EVALUATORS[problem.kind.value](_TorchBlocks(u, un, v, vn, cache))
        r01 = [h.c for h in cset.rate_bounds if h.a == 1 and h.b == 0]
        gaps = _stack([p.rhs - p.lhs for p in cset.feasibility])
        loss = torch.clamp(torch.max(_stack(r01)), min=0.0) + lam * torch.relu(gaps).sum()
        if not loss.requires_grad:
            break
        loss.backward()
        opt.step()
    with torch.no_grad():
        return {r: k.numpy().copy() for r, k in current().items()}


def _polish(problem: _Problem, t, kernels, tol: float, restart: int) -> _Candidate | None:
    """Snap, repair and certify; the two blocks are snapped independently."""
    v_roles = set(problem.v_roles)
    v_raw = {r: k for r, k in kernels.items() if r in v_roles}
    best = None
    seen: set[str] = set()
    for ufn in SNAPS.values():
        tt = ufn(t, t.size)
        us = {r: ufn(k, problem.n_out(r)) for r, k in kernels.items() if r not in v_roles}
        us["decoder"] = repair_decoder(problem, us)
        if _u_residual(problem, us) > tol:
            continue
        v_sources = [v_raw]
        if v_roles:
            v_sources.append(_refine_v(problem, tt, us, v_raw))
        for vsrc in v_sources:
            for vfn in SNAPS.values():
                vs = {r: vfn(k, problem.n_out(r)) for r, k in vsrc.items()}
                try:
                    cert = problem.certificate(tt, {**us, **vs})
                except DomainError:
                    continue
                key = cert.serialized()
                if key in seen:
                    continue
                seen.add(key)
                cand = _evaluate(problem, cert, tol, restart)
                if cand is not None and (best is None or cand < best):
                    best = cand
    return best


def _run_restart(args) -> _Candidate | None:
    kind, q, channel, cards, budget, index = args
    problem = _Problem(kind, q, channel, cards)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=budget.seed, spawn_key=(index,)))
    alpha = 1.0 if index % 2 == 0 else 0.2
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        t, kernels = _descend(problem, budget, rng, alpha)
    finally:
        torch.set_num_threads(threads)
    return _polish(problem, t, kernels, budget.target_tol, index)


# ---------------------------------------------------------------- public


def embed(cert: AuxiliaryFactorization, cards: Mapping[str, int]) -> AuxiliaryFactorization:
    """Pad auxiliary alphabets with zero-probability symbols.

    The padded certificate induces the same joint law on the original
    symbols, so every constraint evaluates to the same value.
    """
    def grow(a: Alphabet) -> Alphabet:
        size = int(cards.get(a.name, a.size))
        if size < a.size:
            raise DimensionMismatch(f"cannot shrink {a.name} from {a.size} to {size}")
        return Alphabet.of_size(a.name, size) if size > a.size else a

    def pad_kernel(k: ChannelKernel) -> ChannelKernel:
        ins = [grow(a) for a in k.inputs]
        outs = [grow(a) for a in k.outputs]
        n_out = math.prod(a.size for a in outs)
        table = np.zeros(tuple(a.size for a in ins + outs))
        table[tuple(slice(0, a.size) for a in k.inputs + k.outputs)] = k.probs
        rows = table.reshape(-1, n_out)
        empty = rows.sum(axis=1) == 0
        rows[empty] = 1.0 / n_out
        return pc.make_kernel(ins, outs, rows.reshape(table.shape))

    t_old = cert.t_dist
    t_alpha = grow(t_old.variables[0])
    t = np.zeros(t_alpha.size)
    t[: t_old.probs.size] = t_old.probs
    factors = {r: (k if r == "channel" else pad_kernel(k)) for r, k in cert.factors.items()}
    return AuxiliaryFactorization(cert.kind, pc.make_joint([t_alpha], t), factors, cert.target)


def _conform(cert: AuxiliaryFactorization, problem: _Problem) -> AuxiliaryFactorization | None:
    """Reorder a certificate's kernels to this module's layout (None if impossible)."""
    try:
        factors = {}
        for role, (ins, outs) in problem.layout.items():
            k = cert.factors[role]
            names = list(k.input_names) + list(k.output_names)
            perm = [names.index(n) for n in list(ins) + list(outs)]
            factors[role] = pc.make_kernel(
                [k.inputs[k.input_names.index(n)] for n in ins],
                [k.outputs[k.output_names.index(n)] for n in outs],
                np.transpose(k.probs, perm),
            )
        factors["channel"] = problem.channel
        return AuxiliaryFactorization(problem.kind, cert.t_dist, factors, problem.q)
    except (KeyError, ValueError):
        return None


def minimize_r01(
    kind: Kind | str,
    q: JointPmf,
    channel: ChannelKernel,
    cards: Mapping[str, int] | None = None,
    budget: OptimizationBudget | None = None,
    warm_start: AuxiliaryFactorization | None = None,
) -> RegionPoint:
    """Smallest certified R01 with R02 unconstrained.

    Parameters
    ----------
    kind
        Region kind (``inner``, ``outer``, ``thm3``, ``crib`` or the enum).
    q
        Target pmf over (X1, X2, W, Y).
    channel
        Channel kernel from (Xt1, Xt2) to the legitimate outputs and Zt.
    cards
        Sizes of T, U1, U2 (and V1, V2 where used); defaults to
        :func:`default_cards`.
    budget
        Search effort and seed.
    warm_start
        A certificate of the same kind with alphabets no larger than
        ``cards``; it is padded and competes with the restarts.

    Returns
    -------
    RegionPoint
        The best point found; an upper bound on the true minimum.

    Raises
    ------
    NoFeasiblePointFound
        When no polished candidate meets the residual tolerance and the
        feasibility predicates.
    """
    kind = Kind.parse(kind) if isinstance(kind, str) else kind
    budget = budget or OptimizationBudget()
    cards = dict(default_cards(kind, q, channel) if cards is None else cards)
    problem = _Problem(kind, q, channel, cards)
    jobs = [(kind, q, channel, cards, budget, i) for i in range(budget.restarts)]
    if budget.jobs > 1:
        with ProcessPoolExecutor(max_workers=budget.jobs) as pool:
            results = list(pool.map(_run_restart, jobs))
    else:
        results = [_run_restart(j) for j in jobs]
    if warm_start is not None:
        padded = _conform(embed(warm_start, cards), problem)
        if padded is not None:
            results.append(_evaluate(problem, padded, budget.target_tol, -1))
    found = [c for c in results if c is not None]
    if not found:
        raise NoFeasiblePointFound(
            f"no candidate met residual <= {budget.target_tol} with feasible links "
            f"after {budget.restarts} restarts"
        )
    return min(found).point


def cardinality_sweep(
    kind: Kind | str,
    q: JointPmf,
    channel: ChannelKernel,
    cards_list: Sequence[Mapping[str, int]],
    budget: OptimizationBudget | None = None,
) -> list[dict]:
    """Optimize at each alphabet-size map, smallest first.

    Each run is warm-started from the previous optimum, so along a chain of
    growing maps the reported minima never increase.
    """
    order = sorted(range(len(cards_list)), key=lambda i: tuple(sorted(cards_list[i].items())))
    order.sort(key=lambda i: math.prod(cards_list[i].values()))
    rows: dict[int, dict] = {}
    prev: RegionPoint | None = None
    for i in order:
        cards = dict(cards_list[i])
        warm = None
        if prev is not None:
            old = {a.name: a.size for k in prev.certificate.factors.values() for a in k.inputs + k.outputs}
            old["T"] = prev.certificate.t_dist.probs.size
            if all(cards.get(n, s) >= s for n, s in old.items()):
                warm = prev.certificate
        try:
            point = minimize_r01(kind, q, channel, cards, budget, warm_start=warm)
        except NoFeasiblePointFound:
            rows[i] = {"cards": cards, "R01": None, "residual": None}
            continue
        rows[i] = {"cards": cards, "R01": point.rates[0], "residual": point.residual, "point": point}
        prev = point
    return [rows[i] for i in range(len(cards_list))]


# ---------------------------------------------------------------- converse


@dataclass(frozen=True)
class ConverseReport:
    """Outcome of the random search over factorizations of the erasure example."""

    trials: int
    valid: int
    excluded: int
    min_i_u1_x1: float
    min_i_u2_x2: float
    optimum_i_u1_x1: float
    tol: float
    worst_residual: float = math.nan
    below: int = 0

    @property
    def violations(self) -> int:
        """Valid candidates with I(U1;X1) or I(U2;X2) below 1 - tol."""
        return self.below

    def to_json(self) -> dict:
        return {**self.__dict__, "violations": self.violations}


def _mi_given_rows(px: np.ndarray, kernel: np.ndarray) -> float:
    joint = px[:, None] * kernel
    return pc.mutual_info(
        pc.make_joint([Alphabet.of_size("A", joint.shape[0]), Alphabet.of_size("B", joint.shape[1])],
                      joint / joint.sum()),
        ["A"], ["B"],
    )


def _pair_channel(k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
    """p(u1, u2 | x1, x2) as a (x-pairs, u-pairs) matrix."""
    return np.einsum("ac,bd->abcd", k1, k2).reshape(k1.shape[0] * k2.shape[0], -1)


def decoder_residual_lp(k1: np.ndarray, k2: np.ndarray, q: JointPmf) -> float:
    """Smallest q-weighted TV between p(y | x1, x2) and q over all decoders.

    ``k1`` and ``k2`` are p(u1 | x1) and p(u2 | x2); W is trivial. Solved as
    a linear program, valid for any target.
    """
    qt = pc.marginal(q, ("X1", "X2", "Y")).probs
    qx = qt.sum(axis=2)
    qy = qt / qx[..., None]
    ny = qt.shape[2]
    a = _pair_channel(k1, k2)
    nx, nu = a.shape
    nd, ns = nu * ny, nx * ny
    w = np.repeat(qx.reshape(-1), ny) * 0.5
    c = np.concatenate([np.zeros(nd), w])
    m1 = sp.kron(sp.csr_matrix(a), sp.identity(ny, format="csr"))
    eye = sp.identity(ns, format="csr")
    a_ub = sp.vstack([sp.hstack([m1, -eye]), sp.hstack([-m1, -eye])]).tocsr()
    b_ub = np.concatenate([qy.reshape(-1), -qy.reshape(-1)])
    a_eq = sp.hstack(
        [sp.kron(sp.identity(nu, format="csr"), sp.csr_matrix(np.ones((1, ny)))), sp.csr_matrix((nu, ns))]
    )
    res = scipy.optimize.linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.ones(nu),
        bounds=[(0, 1)] * nd + [(0, None)] * ns, method="highs",
    )
    return float(res.fun) if res.status == 0 else math.inf


def min_decoder_residual(k1: np.ndarray, k2: np.ndarray, q: JointPmf) -> float:
    """Same quantity as :func:`decoder_residual_lp`.

    When y is a function of (x1, x2) the TV term for x equals
    1 - P(y(x) | x), which is linear in the decoder, so the optimum picks
    for every u-pair the y with the largest incoming mass.
    """
    qt = pc.marginal(q, ("X1", "X2", "Y")).probs
    qx = qt.sum(axis=2).reshape(-1)
    qy = qt.reshape(qx.size, -1) / np.where(qx > 0, qx, 1.0)[:, None]
    if not np.all(np.isclose(qy.max(axis=1), 1.0, rtol=0, atol=pc.NORM_TOL) | (qx == 0)):
        return decoder_residual_lp(k1, k2, q)
    a = _pair_channel(k1, k2)
    mass = np.einsum("x,xu,xy->uy", qx, a, qy)
    return max(0.0, 1.0 - float(mass.max(axis=1).sum()))


def _random_kernel(rng: np.random.Generator, n_in: int) -> np.ndarray:
    """Random row-stochastic matrix with random supports.

    Support sizes follow P(k) proportional to 2^-k so that disjoint rows,
    the only way to meet the target exactly, are common but not forced.
    """
    n_u = int(rng.integers(2, 7))
    sizes = 0.5 ** np.arange(1, n_u + 1)
    k = np.zeros((n_in, n_u))
    for row in k:
        size = 1 + int(rng.choice(n_u, p=sizes / sizes.sum()))
        support = rng.choice(n_u, size=size, replace=False)
        row[support] = rng.dirichlet(np.ones(support.size))
    return k


def converse_search_prop1(trials: int, seed: int = 0, tol: float = 1e-6) -> ConverseReport:
    """Random search for erasure-example factorizations that beat I(U_j; X_j) = 1.

    Each trial draws p(u1 | x1) and p(u2 | x2) with random supports, then
    picks the decoder that best matches the target. Trials whose best
    residual exceeds ``tol`` are excluded. This corroborates the lower
    bound; it does not prove it.
    """
    from .. import example1

    q = example1.target()
    px = np.array([0.5, 0.5])
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    valid = excluded = below = 0
    m1 = m2 = math.inf
    worst = (math.inf, math.nan)
    for _ in range(trials):
        k1, k2 = _random_kernel(rng, 2), _random_kernel(rng, 2)
        res = min_decoder_residual(k1, k2, q)
        if res > tol:
            excluded += 1
            continue
        valid += 1
        i1, i2 = _mi_given_rows(px, k1), _mi_given_rows(px, k2)
        m1, m2 = min(m1, i1), min(m2, i2)
        below += int(min(i1, i2) < 1.0 - tol)
        worst = min(worst, (min(i1, i2), res))
    eye = np.eye(2)
    optimum = _mi_given_rows(px, eye) if min_decoder_residual(eye, eye, q) <= tol else math.nan
    return ConverseReport(trials, valid, excluded, m1, m2, optimum, tol, worst[1], below)
