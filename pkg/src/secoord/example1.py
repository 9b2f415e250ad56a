"""The two-bit erasure example and its reference factorizations.

X1, X2 are independent uniform bits, W is trivial and Y = X1 when X2 = 1,
otherwise the erasure symbol ``e``. The legitimate links are perfect and
the eavesdropper sees (Xt1, Xt2 ⊕ N) with N ~ Bern(p).
"""

from __future__ import annotations

import numpy as np

from . import probcore as pc
from .factorize import AuxiliaryFactorization, Kind, uniform_t
from .probcore import Alphabet, ChannelKernel, JointPmf

BIT = ("0", "1")
Y_SYMBOLS = ("0", "1", "e")
DEFAULT_NOISE = 0.1


def erasure(x1: int, x2: int) -> int:
    return x1 if x2 == 1 else 2


def target() -> JointPmf:
    """q(x1, x2, w, y)."""
    table = np.zeros((2, 2, 1, 3))
    for x1 in range(2):
        for x2 in range(2):
            table[x1, x2, 0, erasure(x1, x2)] = 0.25
    return pc.make_joint(
        [Alphabet("X1", BIT), Alphabet("X2", BIT), Alphabet("W", ("-",)), Alphabet("Y", Y_SYMBOLS)],
        table,
    )


def channel(noise: float = DEFAULT_NOISE) -> ChannelKernel:
    """Perfect links Yt_j = Xt_j; eavesdropper Zt = (Xt1, Xt2 xor N)."""
    zt = Alphabet("Zt", tuple(a + b for a in BIT for b in BIT))
    table = np.zeros((2, 2, 2, 2, 4))
    for x1 in range(2):
        for x2 in range(2):
            for n, pn in ((0, 1.0 - noise), (1, noise)):
                table[x1, x2, x1, x2, 2 * x1 + (x2 ^ n)] += pn
    return pc.make_kernel(
        [Alphabet("Xt1", BIT), Alphabet("Xt2", BIT)],
        [Alphabet("Yt1", BIT), Alphabet("Yt2", BIT), zt],
        table,
    )


def _t1() -> Alphabet:
    return Alphabet.of_size("T", 1)


def _uniform(name: str, parents: list[Alphabet], size: int = 2) -> ChannelKernel:
    shape = tuple(a.size for a in parents) + (size,)
    return pc.make_kernel(parents, [Alphabet(name, BIT[:size])], np.full(shape, 1.0 / size))


def _copy(src: Alphabet, name: str, t: Alphabet) -> ChannelKernel:
    return pc.deterministic_kernel([src, t], Alphabet(name, BIT), lambda i, _t: i)


def decoder(u1: Alphabet | None = None, u2: Alphabet | None = None) -> ChannelKernel:
    """Y = U1 if U2 = 1 else e, for binary U1, U2."""
    u1 = u1 or Alphabet("U1", BIT)
    u2 = u2 or Alphabet("U2", BIT)
    return pc.deterministic_kernel(
        [u1, u2, Alphabet("W", ("-",)), _t1()],
        Alphabet("Y", Y_SYMBOLS),
        lambda a, b, _w, _t: erasure(a, b),
    )


def _u_identity(t: Alphabet) -> dict[str, ChannelKernel]:
    return {
        "U1": _copy(Alphabet("X1", BIT), "U1", t),
        "U2": _copy(Alphabet("X2", BIT), "U2", t),
    }


def nocrib_thm3(noise: float = DEFAULT_NOISE) -> AuxiliaryFactorization:
    """U_j = X_j with uniform channel inputs."""
    t = _t1()
    factors = _u_identity(t)
    factors["Xt1"] = _uniform("Xt1", [t])
    factors["Xt2"] = _uniform("Xt2", [t])
    factors["channel"] = channel(noise)
    factors["decoder"] = decoder()
    return AuxiliaryFactorization(Kind.THM3, uniform_t(1), factors, target())


def nocrib_inner(noise: float = DEFAULT_NOISE) -> AuxiliaryFactorization:
    """U_j = X_j and V_j = Xt_j uniform."""
    t = _t1()
    factors = _u_identity(t)
    for j in ("1", "2"):
        factors["V" + j] = _uniform("V" + j, [t])
        factors["Xt" + j] = _copy(Alphabet("V" + j, BIT), "Xt" + j, t)
    factors["channel"] = channel(noise)
    factors["decoder"] = decoder()
    return AuxiliaryFactorization(Kind.INNER, uniform_t(1), factors, target())


def crib_choice(noise: float = DEFAULT_NOISE) -> AuxiliaryFactorization:
    """U2 = X2, U1 = X1 when U2 = 1 and 0 otherwise; V_j = Xt_j uniform."""
    t = _t1()
    x1, u2 = Alphabet("X1", BIT), Alphabet("U2", BIT)
    factors = {
        "U2": _copy(Alphabet("X2", BIT), "U2", t),
        "U1": pc.deterministic_kernel(
            [x1, u2, t], Alphabet("U1", BIT), lambda a, b, _t: a if b == 1 else 0
        ),
        "V2": _uniform("V2", [t]),
        "Xt2": _copy(Alphabet("V2", BIT), "Xt2", t),
        "V1": _uniform("V1", [Alphabet("Xt2", BIT), t]),
        "Xt1": pc.deterministic_kernel(
            [Alphabet("V1", BIT), Alphabet("Xt2", BIT), t], Alphabet("Xt1", BIT),
            lambda v, _x, _t: v,
        ),
        "channel": channel(noise),
        "decoder": decoder(),
    }
    return AuxiliaryFactorization(Kind.CRIB, uniform_t(1), factors, target())


def biased_target(bias: float) -> JointPmf:
    """The erasure target with X1, X2 i.i.d. Bern(bias)."""
    px = np.array([1.0 - bias, bias])
    table = np.zeros((2, 2, 1, 3))
    for x1 in range(2):
        for x2 in range(2):
            table[x1, x2, 0, erasure(x1, x2)] = px[x1] * px[x2]
    return pc.make_joint(
        [Alphabet("X1", BIT), Alphabet("X2", BIT), Alphabet("W", ("-",)), Alphabet("Y", Y_SYMBOLS)],
        table,
    )


def sum_channel(size: int, noise: float = DEFAULT_NOISE) -> ChannelKernel:
    """Perfect links Yt_j = Xt_j over ``size`` symbols; eavesdropper sees
    Zt = Xt1 + Xt2 + N mod ``size``, N = 0 w.p. 1 - noise, else uniform."""
    sym = tuple(str(i) for i in range(size))
    table = np.zeros((size,) * 5)
    pn = np.full(size, noise / (size - 1))
    pn[0] = 1.0 - noise
    for x1 in range(size):
        for x2 in range(size):
            for n in range(size):
                table[x1, x2, x1, x2, (x1 + x2 + n) % size] += pn[n]
    names = ("Xt1", "Xt2", "Yt1", "Yt2", "Zt")
    return pc.make_kernel(
        [Alphabet(names[0], sym), Alphabet(names[1], sym)],
        [Alphabet(m, sym) for m in names[2:]],
        table,
    )


PROTOCOL_BIAS = 0.12
PROTOCOL_V = 3
PROTOCOL_PLACEMENT = 0.2


def _h(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def protocol_inner(
    bias: float = PROTOCOL_BIAS, noise: float = DEFAULT_NOISE, v_size: int = PROTOCOL_V
) -> AuxiliaryFactorization:
    """Inner-bound choice for the simulator: U_j = X_j, V_j = Xt_j uniform on
    ``v_size`` symbols, biased sources and a noisy-sum eavesdropper.

    Uniform sources with binary links leave no slack over H(X_j); skewed
    sources and a larger V give every rate constraint room at small n.
    """
    t = _t1()
    sym = tuple(str(i) for i in range(v_size))
    factors = _u_identity(t)
    for j in ("1", "2"):
        v = Alphabet("V" + j, sym)
        factors["V" + j] = pc.make_kernel([t], [v], np.full((1, v_size), 1.0 / v_size))
        factors["Xt" + j] = pc.deterministic_kernel([v, t], Alphabet("Xt" + j, sym), lambda i, _t: i)
    factors["channel"] = sum_channel(v_size, noise)
    factors["decoder"] = decoder()
    return AuxiliaryFactorization(Kind.INNER, uniform_t(1), factors, biased_target(bias))


def protocol_rates(
    bias: float = PROTOCOL_BIAS,
    v_size: int = PROTOCOL_V,
    placement: float | None = PROTOCOL_PLACEMENT,
) -> tuple[float, float, float, float]:
    """(R01, R02, Rt1, Rt2) for :func:`protocol_inner`, with no secret rate.

    R0j = H(X_j) + placement * (log|V| - H(X_j)) lies inside both the
    decoding and the binning interval. ``placement=None`` gives all-zero
    rates, far below what the decoder needs.
    """
    if placement is None:
        return (0.0, 0.0, 0.0, 0.0)
    h = _h(np.array([1.0 - bias, bias]))
    r0 = h + placement * (np.log2(v_size) - h)
    return (float(r0), float(r0), 0.0, 0.0)
