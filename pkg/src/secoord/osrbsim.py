"""Exact and Monte Carlo simulation of the binning-based coordination code.

Encoder j draws a uniform bin pair (K_j, F_j), picks (U_j^n, V_j^n) from
the i.i.d. prior restricted to that bin and sends X~_j^n through the
memoryless channel. The decoder recovers both (U^n, V^n) pairs by MAP over
the candidates in the announced bins and emits Y^n from the output kernel.

At desk scale everything is enumerated: sequences are integers in base
|alphabet| with the first letter most significant, and every table is a
dense numpy array or a sparse list of weighted states. The state count is
checked against a fixed cap before any enumeration starts.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Sequence

import numpy as np
from scipy import sparse

from . import probcore as pc
from .errors import DimensionMismatch, DomainError, EnumerationTooLarge
from .factorize import AuxiliaryFactorization, Kind
from .probcore import JointPmf

STATE_CAP = 10**8
SCORE_DECIMALS = 9
MC_CHUNK = 4096
JACKKNIFE_GROUPS = 20


def bin_count(n: int, rate: float) -> int:
    """Number of bins ceil(2^(n R)), guarding against float round-up."""
    if rate < 0 or not math.isfinite(rate):
        raise DomainError(f"rate {rate!r} must be finite and nonnegative")
    return max(1, math.ceil(2.0 ** (n * rate) - 1e-9))


@dataclass(frozen=True, eq=False)
class ProtocolConfig:
    """One blocklength of the protocol.

    ``rates`` is (R01, R02, Rt1, Rt2) in bits; Rt_j is the rate of the
    extra index F_j.
    """

    n: int
    factorization: AuxiliaryFactorization
    rates: tuple[float, float, float, float]
    seed: int = 0
    mode: str = "exact"
    samples: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DimensionMismatch("blocklength must be at least 1")
        if self.factorization.kind is not Kind.INNER:
            raise DomainError("the protocol simulates inner-bound factorizations")
        if self.mode not in ("exact", "montecarlo"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == "montecarlo" and self.samples < 1:
            raise DomainError("montecarlo mode needs samples >= 1")
        if len(self.rates) != 4:
            raise DimensionMismatch("rates are (R01, R02, Rt1, Rt2)")
        for r in self.rates:
            bin_count(1, r)

    @property
    def bins(self) -> tuple[int, int, int, int]:
        """(K1, F1, K2, F2) bin counts."""
        r01, r02, rt1, rt2 = self.rates
        return tuple(bin_count(self.n, r) for r in (r01, rt1, r02, rt2))  # type: ignore[return-value]

    def with_n(self, n: int, seed: int | None = None) -> "ProtocolConfig":
        return replace(self, n=n, seed=self.seed if seed is None else seed)


@dataclass(frozen=True)
class BinMaps:
    """phi1..phi4 as arrays over the a-sequence space of each encoder.

    ``k1[a] in [0, K1)`` and ``f1[a] in [0, F1)`` for encoder 1, likewise
    ``k2``, ``f2``; ``b_j = k_j * F_j + f_j`` is the joint bin.
    """

    k1: np.ndarray
    f1: np.ndarray
    k2: np.ndarray
    f2: np.ndarray
    counts: tuple[int, int, int, int]

    def joint(self, j: int) -> np.ndarray:
        if j == 1:
            return self.k1 * self.counts[1] + self.f1
        return self.k2 * self.counts[3] + self.f2


@dataclass
class SimRecord:
    n: int
    tv_coord: float
    leakage: float
    sw_error: float
    extraction_kl: float | None = None
    best_f_tv: float | None = None
    se_tv: float | None = None
    se_leakage: float | None = None
    se_sw: float | None = None
    reliable: bool = True
    empty_bins: int = 0
    seeds: int = 1
    workers: int = 1
    mode: str = "exact"

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SimReport:
    records: list[SimRecord] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"records": [r.to_json() for r in self.records]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["n", "tv_coord", "leakage_bits", "sw_error", "extraction_kl", "se_tv", "se_leakage", "se_sw"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            w.writerow([r.n, r.tv_coord, r.leakage, r.sw_error, r.extraction_kl, r.se_tv, r.se_leakage, r.se_sw])
        return buf.getvalue()


# ---------------------------------------------------------------- tables


def _power(arr: np.ndarray, n: int) -> np.ndarray:
    """n-fold product law: axis k of the result indexes sequences over axis k."""
    out = arr
    for _ in range(n - 1):
        k = arr.ndim
        prod = np.multiply.outer(out, arr)
        order = [i for pair in zip(range(k), range(k, 2 * k)) for i in pair]
        prod = prod.transpose(order)
        out = prod.reshape([out.shape[i] * arr.shape[i] for i in range(k)])
    return out


def _digits(idx: np.ndarray, base: int, n: int) -> np.ndarray:
    out = np.empty(idx.shape + (n,), dtype=np.int64)
    rest = idx.astype(np.int64)
    for i in range(n - 1, -1, -1):
        out[..., i] = rest % base
        rest = rest // base
    return out


def _undigits(d: np.ndarray, base: int) -> np.ndarray:
    out = np.zeros(d.shape[:-1], dtype=np.int64)
    for i in range(d.shape[-1]):
        out = out * base + d[..., i]
    return out


def _kernel_table(k: pc.ChannelKernel, order: Sequence[str]) -> np.ndarray:
    names = list(k.input_names) + list(k.output_names)
    keep = [n for n in order if n in names]
    arr = np.transpose(k.probs, [names.index(n) for n in keep])
    return arr


class _Letter:
    """Single-letter tables of an inner-bound factorization with trivial T."""

    def __init__(self, cert: AuxiliaryFactorization):
        if cert.t_dist.probs.size != 1:
            raise DomainError("protocol simulation needs a trivial time-sharing variable")
        f = cert.factors
        self.q = pc.marginal(cert.target, ("X1", "X2", "W")).probs
        self.qfull = pc.marginal(cert.target, ("X1", "X2", "W", "Y")).probs
        self.pu1 = _kernel_table(f["U1"], ["X1", "T", "U1"])[:, 0, :]
        self.pu2 = _kernel_table(f["U2"], ["X2", "T", "U2"])[:, 0, :]
        self.pv1 = _kernel_table(f["V1"], ["T", "V1"])[0]
        self.pv2 = _kernel_table(f["V2"], ["T", "V2"])[0]
        self.px1 = _kernel_table(f["Xt1"], ["V1", "T", "Xt1"])[:, 0, :]
        self.px2 = _kernel_table(f["Xt2"], ["V2", "T", "Xt2"])[:, 0, :]
        self.py = _kernel_table(f["decoder"], ["U1", "U2", "W", "T", "Y"])[:, :, :, 0, :]
        ch = f["channel"]
        legit = [n for n in ("Yt", "Yt1", "Yt2") if n in ch.output_names]
        table = _kernel_table(ch, ["Xt1", "Xt2"] + legit + ["Zt"])
        s = table.shape
        self.ch = table.reshape(s[0], s[1], -1, s[-1])
        self.nu1, self.nu2 = self.pu1.shape[1], self.pu2.shape[1]
        self.nv1, self.nv2 = self.pv1.size, self.pv2.size
        self.nx1, self.nx2, self.nw = self.q.shape
        self.ny = self.py.shape[-1]
        self.nyt, self.nz = self.ch.shape[2], self.ch.shape[3]
        self.na1, self.na2 = self.nu1 * self.nv1, self.nu2 * self.nv2
        # prior of a_j = (u_j, v_j) given x_j
        self.pa1 = (self.pu1[:, :, None] * self.pv1[None, None, :]).reshape(self.nx1, -1)
        self.pa2 = (self.pu2[:, :, None] * self.pv2[None, None, :]).reshape(self.nx2, -1)
        # channel seen from the code layer: p(yt, zt | v1, v2)
        self.cv = np.einsum("ac,bd,cdyz->abyz", self.px1, self.px2, self.ch)
        self.puuw = np.einsum("abw,ac,bd->cdw", self.q, self.pu1, self.pu2)


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), -np.inf)


class _Tables:
    """n-letter tables shared by the exact and Monte Carlo engines."""

    def __init__(self, cfg: ProtocolConfig):
        L = _Letter(cfg.factorization)
        n = cfg.n
        self.L, self.n = L, n
        self.size = {
            "x1": L.nx1**n, "x2": L.nx2**n, "w": L.nw**n, "y": L.ny**n,
            "a1": L.na1**n, "a2": L.na2**n, "u1": L.nu1**n, "u2": L.nu2**n,
            "v1": L.nv1**n, "v2": L.nv2**n, "yt": L.nyt**n, "z": L.nz**n,
        }
        dense = [
            self.size["x1"] * self.size["a1"],
            self.size["x2"] * self.size["a2"],
            self.size["u1"] * self.size["u2"] * self.size["w"],
            self.size["x1"] * self.size["x2"] * self.size["w"] * self.size["y"] * self.size["z"],
        ]
        if max(dense) > STATE_CAP:
            raise EnumerationTooLarge(f"dense tables need {max(dense):.3g} entries (cap {STATE_CAP:.0e})")
        self.prior1 = reduce(np.kron, [L.pa1] * n)
        self.prior2 = reduce(np.kron, [L.pa2] * n)
        self.q = _power(L.q, n)
        self.qfull = _power(L.qfull, n)
        self.lu = _log(_power(L.puuw, n))
        self.lpv1 = _log(_power(L.pv1, n))
        self.lpv2 = _log(_power(L.pv2, n))
        self.py = _power(L.py, n)
        a1 = _digits(np.arange(self.size["a1"]), L.na1, n)
        a2 = _digits(np.arange(self.size["a2"]), L.na2, n)
        self.u_of_a1 = _undigits(a1 // L.nv1, L.nu1)
        self.v_of_a1 = _undigits(a1 % L.nv1, L.nv1)
        self.u_of_a2 = _undigits(a2 // L.nv2, L.nu2)
        self.v_of_a2 = _undigits(a2 % L.nv2, L.nv2)
        # classes (v1, v2, yt) with positive probability, per letter then n-fold
        v1, v2, yt = np.nonzero(L.cv.sum(axis=3) > 0)
        ncls = v1.size
        cz1 = L.cv[v1, v2, yt, :]
        cls = _digits(np.arange(ncls**n), ncls, n)
        self.cls_v1 = _undigits(v1[cls], L.nv1)
        self.cls_v2 = _undigits(v2[cls], L.nv2)
        self.cls_yt = _undigits(yt[cls], L.nyt)
        n_cls = ncls**n
        if n_cls * self.size["z"] > STATE_CAP:
            raise EnumerationTooLarge("channel class table too large")
        self.cz = reduce(np.kron, [cz1] * n)  # (classes, z)
        self.p_cls = self.cz.sum(axis=1)
        self.l_cls = _log(self.p_cls)
        pair = self.cls_v1 * self.size["v2"] + self.cls_v2
        order = np.argsort(pair, kind="stable")
        self.cls_sorted = order
        counts = np.bincount(pair, minlength=self.size["v1"] * self.size["v2"])
        self.cls_start = np.concatenate([[0], np.cumsum(counts)])
        self.n_cls = n_cls


def sample_bins(cfg: ProtocolConfig, tables: _Tables | None = None) -> BinMaps:
    """Independent uniform bin assignments, a pure function of ``cfg.seed``."""
    L = _Letter(cfg.factorization)
    na1, na2 = L.na1**cfg.n, L.na2**cfg.n
    if max(na1, na2) > STATE_CAP:
        raise EnumerationTooLarge(f"sequence spaces of size {max(na1, na2):.3g} exceed the cap")
    k1, f1, k2, f2 = cfg.bins
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    return BinMaps(
        rng.integers(0, k1, size=na1),
        rng.integers(0, f1, size=na1),
        rng.integers(0, k2, size=na2),
        rng.integers(0, f2, size=na2),
        (k1, f1, k2, f2),
    )


# ---------------------------------------------------------------- encoders


@dataclass
class _Encoder:
    """Reachable (x, b, a) triples with weight P(a | b, x)."""

    x: np.ndarray
    b: np.ndarray
    a: np.ndarray
    w: np.ndarray
    empty: int
    bins: np.ndarray
    support: np.ndarray


def _encoder(prior: np.ndarray, bins: np.ndarray, n_bins: int, px: np.ndarray) -> _Encoder:
    nx, na = prior.shape
    onehot = np.zeros((na, n_bins))
    onehot[np.arange(na), bins] = 1.0
    mass = prior @ onehot  # (x, b)
    xs, as_ = np.nonzero(prior > 0)
    bs = bins[as_]
    m = mass[xs, bs]
    parts = [(xs, bs, as_, prior[xs, as_] / m)]
    empty = 0
    live = np.flatnonzero(px > 0)
    for x in live:
        for b in np.flatnonzero(mass[x] <= 0):
            # bin has no mass under this x: fall back to the prior
            a = np.flatnonzero(prior[x] > 0)
            parts.append((np.full(a.size, x), np.full(a.size, b), a, prior[x, a]))
            empty += 1
    x = np.concatenate([p[0] for p in parts])
    b = np.concatenate([p[1] for p in parts])
    a = np.concatenate([p[2] for p in parts])
    w = np.concatenate([p[3] for p in parts])
    order = np.lexsort((a, x, b))
    support = np.flatnonzero(prior.sum(axis=0) > 0)
    return _Encoder(x[order], b[order], a[order], w[order], empty, bins, support)


def _candidates(e: _Encoder, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """(bin, a) decoding candidates sorted by bin then a.

    A bin holding no sequence of positive probability is searched over the
    whole support instead.
    """
    b = e.bins[e.support]
    missing = np.setdiff1d(np.arange(n_bins), b)
    bs = np.concatenate([b, np.repeat(missing, e.support.size)])
    as_ = np.concatenate([e.support, np.tile(e.support, missing.size)])
    order = np.lexsort((as_, bs))
    return bs[order], as_[order]


def _expand_classes(t: _Tables, v1: np.ndarray, v2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Repeat index and channel class for every positive-probability yt."""
    pair = v1 * t.size["v2"] + v2
    start = t.cls_start[pair]
    cnt = t.cls_start[pair + 1] - start
    rep = np.repeat(np.arange(pair.size), cnt)
    offs = np.arange(rep.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return rep, t.cls_sorted[np.repeat(start, cnt) + offs]


def _decoder_table(t: _Tables, e1: _Encoder, e2: _Encoder, nb1: int, nb2: int):
    """MAP pair (a1, a2) for every (b1, b2, w, yt); lexicographic ties.

    Keys never reached by a finite score keep the first candidate pair.
    """
    nw, nyt = t.size["w"], t.size["yt"]
    if nb1 * nb2 * nw * nyt > STATE_CAP:
        raise EnumerationTooLarge("decoder table exceeds the cap")
    cb1, ca1 = _candidates(e1, nb1)
    cb2, ca2 = _candidates(e2, nb2)
    first1 = ca1[np.searchsorted(cb1, np.arange(nb1))]
    first2 = ca2[np.searchsorted(cb2, np.arange(nb2))]
    g1 = np.broadcast_to(first1[:, None, None, None], (nb1, nb2, nw, nyt)).copy()
    g2 = np.broadcast_to(first2[None, :, None, None], (nb1, nb2, nw, nyt)).copy()
    base2 = t.lpv2[t.v_of_a2[ca2]]
    for b1 in range(nb1):
        c1 = ca1[cb1 == b1]
        i1 = np.repeat(c1, ca2.size)
        i2 = np.tile(np.arange(ca2.size), c1.size)
        rep, cls = _expand_classes(t, t.v_of_a1[i1], t.v_of_a2[ca2[i2]])
        if rep.size * nw > STATE_CAP:
            raise EnumerationTooLarge("decoder candidate list exceeds the cap")
        a1, j2 = i1[rep], i2[rep]
        a2, b2 = ca2[j2], cb2[j2]
        part = t.lpv1[t.v_of_a1[a1]] + base2[j2] + t.l_cls[cls]
        yt = t.cls_yt[cls]
        for w in range(nw):
            score = np.round(part + t.lu[t.u_of_a1[a1], t.u_of_a2[a2], w], SCORE_DECIMALS)
            ok = np.isfinite(score)
            key = (b2 * nw + w) * nyt + yt
            order = np.lexsort((a2[ok], a1[ok], -score[ok], key[ok]))
            ks = key[ok][order]
            head = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]]) if ks.size else ks
            pick = order[head]
            g1[b1].reshape(-1)[ks[head]] = a1[ok][pick]
            g2[b1].reshape(-1)[ks[head]] = a2[ok][pick]
    return g1, g2


# ---------------------------------------------------------------- metrics


def _mi_bits(joint: np.ndarray) -> float:
    """I(row; column) of a 2-D table."""
    total = joint.sum()
    if total <= 0:
        return 0.0
    p = joint / total
    pr, pc_ = p.sum(axis=1), p.sum(axis=0)

    def h(v):
        v = v[v > 0]
        return float(-(v * np.log2(v)).sum())

    return max(0.0, h(pr) + h(pc_) - h(p.reshape(-1)))


def _tv_coord(phat: np.ndarray, qn: np.ndarray) -> float:
    """TV between p(a, z) and p(z) q(a); ``phat`` is (a, z)."""
    pz = phat.sum(axis=0)
    return float(min(1.0, 0.5 * np.abs(phat - qn[:, None] * pz[None, :]).sum()))


def _kl_bits(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(max(0.0, (p[mask] * np.log2(p[mask] / q[mask])).sum()))


# ---------------------------------------------------------------- exact


def run_exact(cfg: ProtocolConfig, bins: BinMaps | None = None) -> SimRecord:
    """Exact induced law of (X1^n, X2^n, W^n, Y^n, Z~^n), averaged over K and F.

    Raises
    ------
    EnumerationTooLarge
        When the weighted state list would exceed the cap.
    """
    t = _Tables(cfg)
    bins = bins or sample_bins(cfg)
    k1, f1, k2, f2 = bins.counts
    nb1, nb2 = k1 * f1, k2 * f2
    px1 = t.q.sum(axis=(1, 2))
    px2 = t.q.sum(axis=(0, 2))
    e1 = _encoder(t.prior1, bins.joint(1), nb1, px1)
    e2 = _encoder(t.prior2, bins.joint(2), nb2, px2)
    max_cls = int(np.diff(t.cls_start).max())
    states = e1.w.size * e2.w.size * t.size["w"] * max_cls
    if states > STATE_CAP:
        raise EnumerationTooLarge(f"{states:.3g} weighted states exceed the cap {STATE_CAP:.0e}")
    g1, g2 = _decoder_table(t, e1, e2, nb1, nb2)

    nx1, nx2, nw, ny = t.size["x1"], t.size["x2"], t.size["w"], t.size["y"]
    per_f = f1 * f2 > 1 and f1 * f2 <= 16
    n_f = f1 * f2 if per_f else 1
    n_rows = nx1 * nx2 * nw * ny
    if n_rows * t.size["z"] * n_f > STATE_CAP:
        raise EnumerationTooLarge("induced joint table exceeds the cap")
    acc = [sparse.csr_matrix((n_rows, t.n_cls)) for _ in range(n_f)]
    sw_err = 0.0
    scale = 1.0 / (nb1 * nb2)
    py_flat = t.py.reshape(t.size["u1"], t.size["u2"], nw, ny)
    for b1 in range(nb1):
        sel = e1.b == b1
        x1, a1, w1 = e1.x[sel], e1.a[sel], e1.w[sel]
        if x1.size == 0:
            continue
        # all pairs with every encoder-2 triple
        i1 = np.repeat(np.arange(x1.size), e2.w.size)
        i2 = np.tile(np.arange(e2.w.size), x1.size)
        for w in range(nw):
            wt = w1[i1] * e2.w[i2] * t.q[x1[i1], e2.x[i2], w] * scale
            keep = wt > 0
            j1, j2, wt = i1[keep], i2[keep], wt[keep]
            if wt.size == 0:
                continue
            rep, cls = _expand_classes(t, t.v_of_a1[a1[j1]], t.v_of_a2[e2.a[j2]])
            jj1, jj2, ww = j1[rep], j2[rep], wt[rep]
            bb2 = e2.b[jj2]
            yt = t.cls_yt[cls]
            d1, d2 = g1[b1, bb2, w, yt], g2[b1, bb2, w, yt]
            miss = (d1 != a1[jj1]) | (d2 != e2.a[jj2])
            sw_err += float((ww * t.p_cls[cls])[miss].sum())
            pyv = py_flat[t.u_of_a1[d1], t.u_of_a2[d2], w, :]  # (entries, y)
            row = ((x1[jj1] * nx2 + e2.x[jj2]) * nw + w) * ny
            fidx = ((b1 % f1) * f2 + bb2 % f2) if per_f else np.zeros_like(bb2)
            ent, ys = np.nonzero(pyv)
            vals = ww[ent] * pyv[ent, ys]
            for f in np.unique(fidx):
                m = fidx[ent] == f
                acc[f] = acc[f] + sparse.csr_matrix(
                    (vals[m], (row[ent[m]] + ys[m], cls[ent[m]])), shape=(n_rows, t.n_cls)
                )
    phat_f = np.stack([m @ t.cz for m in acc])  # (f, xwy, z)
    phat = phat_f.sum(axis=0)
    total = phat.sum()
    if abs(total - 1.0) > 1e-9:
        raise DomainError(f"induced law sums to {total!r}")
    qn = t.qfull.reshape(-1)
    rec = SimRecord(
        n=cfg.n,
        tv_coord=_tv_coord(phat, qn),
        leakage=_mi_bits(phat),
        sw_error=min(1.0, max(0.0, sw_err)),
        empty_bins=e1.empty + e2.empty,
    )
    if per_f:
        tvs = [_tv_coord(p * n_f, qn) for p in phat_f]
        rec.best_f_tv = float(min(tvs))
        joint = phat_f.reshape(n_f, -1).T
        rec.extraction_kl = _kl_bits(joint, phat.reshape(-1)[:, None] / n_f * np.ones((1, n_f)))
    else:
        rec.best_f_tv = rec.tv_coord
        rec.extraction_kl = 0.0
    return rec


# ---------------------------------------------------------------- Monte Carlo


def _sample_letters(rng: np.random.Generator, table: np.ndarray, size: tuple[int, ...]) -> np.ndarray:
    flat = table.reshape(-1)
    return rng.choice(flat.size, size=size, p=flat / flat.sum())


def _sample_rows(rng: np.random.Generator, rows: np.ndarray, given: np.ndarray) -> np.ndarray:
    """One draw from ``rows[given[i]]`` for every i (rows are pmfs)."""
    cdf = np.cumsum(rows, axis=-1)
    u = rng.random(given.shape) * cdf[given, -1]
    return (u[..., None] > cdf[given]).sum(axis=-1)


def _plugin_stats(cells: np.ndarray, z: np.ndarray, qn: np.ndarray, nz: int):
    """Plug-in TV and Miller-Madow leakage from paired samples."""
    n = cells.size
    key = cells * nz + z
    uniq, cnt = np.unique(key, return_counts=True)
    p = cnt / n
    ca, cz_ = uniq // nz, uniq % nz
    pz = np.bincount(z, minlength=nz) / n
    diff = np.abs(p - qn[ca] * pz[cz_]).sum()
    # q-mass on cells never observed together with z
    seen = np.bincount(cz_, weights=qn[ca], minlength=nz)
    tv = 0.5 * (diff + float((pz * (1.0 - seen)).sum()))

    def h_mm(counts):
        c = counts[counts > 0]
        pp = c / n
        return float(-(pp * np.log2(pp)).sum()) + (c.size - 1) / (2 * n * math.log(2))

    _, ca_cnt = np.unique(cells, return_counts=True)
    leak = h_mm(ca_cnt) + h_mm(np.bincount(z, minlength=nz)) - h_mm(cnt)
    return min(1.0, tv), max(0.0, leak)


def run_mc(cfg: ProtocolConfig, bins: BinMaps | None = None, samples: int | None = None) -> SimRecord:
    """Plug-in estimates from simulated blocks with delete-group jackknife errors.

    Sample i is drawn from the stream of chunk ``i // 4096``, seeded by
    (cfg.seed, chunk), so results do not depend on how chunks are scheduled.
    """
    samples = samples or cfg.samples
    if samples < 1:
        raise DomainError("samples must be >= 1")
    t = _Tables(cfg)
    L, n = t.L, cfg.n
    bins = bins or sample_bins(cfg)
    k1, f1, k2, f2 = bins.counts
    nb1, nb2 = k1 * f1, k2 * f2
    px1 = t.q.sum(axis=(1, 2))
    px2 = t.q.sum(axis=(0, 2))
    e1 = _encoder(t.prior1, bins.joint(1), nb1, px1)
    e2 = _encoder(t.prior2, bins.joint(2), nb2, px2)
    g1, g2 = _decoder_table(t, e1, e2, nb1, nb2)
    enc = []
    for e, nx in ((e1, t.size["x1"]), (e2, t.size["x2"])):
        key = e.b * nx + e.x
        cw = np.cumsum(e.w)
        start = np.searchsorted(key, np.arange(nx * (nb1 if e is e1 else nb2)), side="left")
        stop = np.searchsorted(key, np.arange(nx * (nb1 if e is e1 else nb2)), side="right")
        enc.append((key, cw, start, stop, nx))

    cells_all, z_all, miss_all = [], [], []
    n_chunks = math.ceil(samples / MC_CHUNK)
    for c in range(n_chunks):
        m = min(MC_CHUNK, samples - c * MC_CHUNK)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, c])))
        src = _sample_letters(rng, L.q, (m, n))
        x1l, x2l, wl = np.unravel_index(src, L.q.shape)
        x1s, x2s, ws = _undigits(x1l, L.nx1), _undigits(x2l, L.nx2), _undigits(wl, L.nw)
        b1 = rng.integers(0, nb1, size=m)
        b2 = rng.integers(0, nb2, size=m)
        draws = []
        for (key, cw, start, stop, nx), b, x, e in ((enc[0], b1, x1s, e1), (enc[1], b2, x2s, e2)):
            g = b * nx + x
            lo, hi = start[g], stop[g]
            base = np.where(lo > 0, cw[np.maximum(lo - 1, 0)], 0.0)
            tot = cw[hi - 1] - base
            u = base + rng.random(m) * tot
            idx = np.minimum(np.searchsorted(cw, u, side="right"), hi - 1)
            draws.append(e.a[idx])
        a1, a2 = draws
        v1 = _digits(t.v_of_a1[a1], L.nv1, n)
        v2 = _digits(t.v_of_a2[a2], L.nv2, n)
        xt1 = _sample_rows(rng, L.px1, v1)
        xt2 = _sample_rows(rng, L.px2, v2)
        chrows = L.ch.reshape(L.ch.shape[0], L.ch.shape[1], -1)
        yz = _sample_rows(rng, chrows.reshape(-1, chrows.shape[-1]), xt1 * L.ch.shape[1] + xt2)
        ytl, zl = yz // L.nz, yz % L.nz
        yt, z = _undigits(ytl, L.nyt), _undigits(zl, L.nz)
        d1, d2 = g1[b1, b2, ws, yt], g2[b1, b2, ws, yt]
        u1 = _digits(t.u_of_a1[d1], L.nu1, n)
        u2 = _digits(t.u_of_a2[d2], L.nu2, n)
        pyr = L.py.reshape(-1, L.ny)
        yl = _sample_rows(rng, pyr, (u1 * L.nu2 + u2) * L.nw + wl)
        ys = _undigits(yl, L.ny)
        cells = ((x1s * t.size["x2"] + x2s) * t.size["w"] + ws) * t.size["y"] + ys
        cells_all.append(cells)
        z_all.append(z)
        miss_all.append((d1 != a1) | (d2 != a2))
    cells = np.concatenate(cells_all)
    z = np.concatenate(z_all)
    miss = np.concatenate(miss_all).astype(float)
    qn = t.qfull.reshape(-1)
    tv, leak = _plugin_stats(cells, z, qn, t.size["z"])
    sw = float(miss.mean())
    rec = SimRecord(
        n=n, tv_coord=tv, leakage=leak, sw_error=sw,
        empty_bins=e1.empty + e2.empty, mode="montecarlo",
    )
    if samples >= 2 * JACKKNIFE_GROUPS:
        groups = np.arange(samples) % JACKKNIFE_GROUPS
        est = []
        for g in range(JACKKNIFE_GROUPS):
            keep = groups != g
            est.append(_plugin_stats(cells[keep], z[keep], qn, t.size["z"]))
        est = np.array(est)
        G = JACKKNIFE_GROUPS
        se = np.sqrt((G - 1) / G * ((est - est.mean(axis=0)) ** 2).sum(axis=0))
        rec.se_tv, rec.se_leakage = float(se[0]), float(se[1])
        rec.se_sw = float(math.sqrt(max(sw * (1 - sw), 0.0) / samples))
    else:
        rec.se_tv = rec.se_leakage = rec.se_sw = math.nan
        rec.reliable = False
    return rec


def rate_slacks(cfg: ProtocolConfig) -> dict[str, float]:
    """Slack of every binning-scheme rate condition at ``cfg.rates``.

    Keys are the rows of the shipped nine-row system in file order.
    """
    from . import fme

    system = fme.load_fixture("inner_system")
    val = fme.valuation_from_joint(cfg.factorization.assemble(), system.atoms)
    r01, r02, rt1, rt2 = cfg.rates
    rates = {"R01": r01, "R02": r02, "Rt1": rt1, "Rt2": rt2}
    return {fme.format_row(r): r.value(val, rates) for r in system.rows}


# ---------------------------------------------------------------- sweeps


def _run(cfg: ProtocolConfig) -> SimRecord:
    bins = sample_bins(cfg)
    return run_exact(cfg, bins) if cfg.mode == "exact" else run_mc(cfg, bins)


def _mean_record(recs: Sequence[SimRecord]) -> SimRecord:
    out = SimRecord(
        n=recs[0].n,
        tv_coord=float(np.mean([r.tv_coord for r in recs])),
        leakage=float(np.mean([r.leakage for r in recs])),
        sw_error=float(np.mean([r.sw_error for r in recs])),
        empty_bins=int(sum(r.empty_bins for r in recs)),
        seeds=len(recs),
        mode=recs[0].mode,
    )
    for name in ("extraction_kl", "best_f_tv"):
        vals = [getattr(r, name) for r in recs]
        if all(v is not None for v in vals):
            setattr(out, name, float(np.mean(vals)))
    if len(recs) > 1:
        k = len(recs)
        out.se_tv = float(np.std([r.tv_coord for r in recs], ddof=1) / math.sqrt(k))
        out.se_leakage = float(np.std([r.leakage for r in recs], ddof=1) / math.sqrt(k))
        out.se_sw = float(np.std([r.sw_error for r in recs], ddof=1) / math.sqrt(k))
    return out


def binning_seed(seed: int, n: int, index: int) -> int:
    """Seed of the ``index``-th binning at blocklength n."""
    return int(np.random.SeedSequence([seed, n, index]).generate_state(1)[0])


def sweep_blocklengths(
    template: ProtocolConfig, n_list: Sequence[int], seeds: int | Sequence[int] = 1
) -> SimReport:
    """Average each blocklength over independent binnings.

    ``seeds`` is one count for every n or a count per entry of ``n_list``;
    short blocks vary far more across bin maps and usually need more.
    """
    counts = [seeds] * len(n_list) if isinstance(seeds, int) else list(seeds)
    if len(counts) != len(n_list) or min(counts, default=1) < 1:
        raise DimensionMismatch("need one positive seed count per blocklength")
    report = SimReport()
    for n, k in zip(n_list, counts):
        recs = [_run(template.with_n(n, binning_seed(template.seed, n, s))) for s in range(k)]
        report.records.append(_mean_record(recs))
    return report


# ---------------------------------------------------------------- extraction


@dataclass(frozen=True)
class ExtractionRecord:
    n: int
    bins: int
    kl: float
    kl_se: float
    tv: float
    pinsker_ok: bool


def binning_kl(pn: np.ndarray, phi: np.ndarray, k: int) -> tuple[float, float]:
    """KL and TV between P_{A,K} and P_A x Unif(K) for one bin map.

    ``pn`` is the (a, b) table, ``phi[b]`` the bin of b.
    """
    nb = pn.shape[1]
    onehot = np.zeros((nb, k))
    onehot[np.arange(nb), phi] = 1.0
    pak = pn @ onehot
    ref = pn.sum(axis=1)[:, None] * np.full((1, k), 1.0 / k)
    return _kl_bits(pak, ref), 0.5 * float(np.abs(pak - ref).sum())


def extraction_test(
    source: JointPmf,
    rate: float,
    n_list: Sequence[int],
    seeds: int = 50,
    seed: int = 0,
) -> list[ExtractionRecord]:
    """Exact KL(P_{A^n,K} || P_{A^n} x Unif(K)) for random binning of B^n.

    ``source`` is a pmf over two variables (A, B) in that order; K has
    ceil(2^(nR)) values. The KL is averaged over ``seeds`` bin maps.
    """
    if len(source.variables) != 2:
        raise DimensionMismatch("source must be a pmf over exactly two variables (A, B)")
    out = []
    for n in n_list:
        pn = _power(source.probs, n)
        na, nb = pn.shape
        if na * nb > STATE_CAP:
            raise EnumerationTooLarge(f"{na * nb:.3g} source sequences exceed the cap")
        k = bin_count(n, rate)
        kls, tvs, ok = [], [], True
        for s in range(seeds):
            rng = np.random.default_rng(np.random.SeedSequence([seed, n, s]))
            kl, tv = binning_kl(pn, rng.integers(0, k, size=nb), k)
            ok &= kl >= 2.0 / math.log(2.0) * tv * tv - 1e-12
            kls.append(kl)
            tvs.append(tv)
        se = float(np.std(kls, ddof=1) / math.sqrt(seeds)) if seeds > 1 else math.nan
        out.append(ExtractionRecord(n, k, float(np.mean(kls)), se, float(np.mean(tvs)), bool(ok)))
    return out
