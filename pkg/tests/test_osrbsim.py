import itertools
import math

import numpy as np
import pytest
from scipy import stats

from secoord import example1
from secoord import osrbsim as sim
from secoord import probcore as pc
from secoord.errors import DomainError, EnumerationTooLarge
from secoord.factorize import AuxiliaryFactorization, Kind, random_factorization, uniform_t


def table(kernel, order):
    names = [a.name for a in kernel.inputs + kernel.outputs]
    return np.transpose(kernel.probs, [names.index(n) for n in order])


def one_shot_oracle(cert, bins):
    """Brute-force single-letter protocol law, loop by loop.

    Returns (tv, leakage, sw_error) for the bin maps ``bins``.
    """
    f = cert.factors
    q = cert.target.probs  # (x1, x2, w, y)
    qx = q.sum(axis=3)
    pu1 = table(f["U1"], ["X1", "T", "U1"])[:, 0]
    pu2 = table(f["U2"], ["X2", "T", "U2"])[:, 0]
    pv1 = table(f["V1"], ["T", "V1"])[0]
    pv2 = table(f["V2"], ["T", "V2"])[0]
    pxt1 = table(f["Xt1"], ["V1", "T", "Xt1"])[:, 0]
    pxt2 = table(f["Xt2"], ["V2", "T", "Xt2"])[:, 0]
    legit = [n for n in ("Yt", "Yt1", "Yt2") if n in f["channel"].output_names]
    ch = table(f["channel"], ["Xt1", "Xt2"] + legit + ["Zt"])
    ch = ch.reshape(ch.shape[0], ch.shape[1], -1, ch.shape[-1])
    py = table(f["decoder"], ["U1", "U2", "W", "T", "Y"])[:, :, :, 0]
    nu1, nu2, nv1, nv2 = pu1.shape[1], pu2.shape[1], pv1.size, pv2.size
    nx1, nx2, nw, ny = q.shape
    nyt, nz = ch.shape[2], ch.shape[3]
    A1 = list(itertools.product(range(nu1), range(nv1)))
    A2 = list(itertools.product(range(nu2), range(nv2)))
    prior1 = np.array([[pu1[x, u] * pv1[v] for u, v in A1] for x in range(nx1)])
    prior2 = np.array([[pu2[x, u] * pv2[v] for u, v in A2] for x in range(nx2)])
    # p(yt, z | v1, v2)
    cv = np.einsum("ac,bd,cdyz->abyz", pxt1, pxt2, ch)
    puuw = np.einsum("abw,ac,bd->cdw", qx, pu1, pu2)
    nb1, nb2 = bins.counts[0] * bins.counts[1], bins.counts[2] * bins.counts[3]
    bin1, bin2 = bins.joint(1), bins.joint(2)
    sup1 = [a for a in range(len(A1)) if prior1[:, a].sum() > 0]
    sup2 = [a for a in range(len(A2)) if prior2[:, a].sum() > 0]

    def cands(b, binmap, sup):
        inside = [a for a in sup if binmap[a] == b]
        return inside or sup

    def decode(b1, b2, w, yt):
        best, pick = None, None
        c1, c2 = cands(b1, bin1, sup1), cands(b2, bin2, sup2)
        for a1 in c1:
            for a2 in c2:
                (u1, v1), (u2, v2) = A1[a1], A2[a2]
                p = puuw[u1, u2, w] * pv1[v1] * pv2[v2] * cv[v1, v2, yt].sum()
                if p <= 0:
                    continue
                s = round(math.log2(p), 9)
                if best is None or s > best:
                    best, pick = s, (a1, a2)
        return pick if pick is not None else (c1[0], c2[0])

    def enc(prior, x, b, binmap):
        w = np.array([prior[x, a] if binmap[a] == b else 0.0 for a in range(prior.shape[1])])
        return w / w.sum() if w.sum() > 0 else prior[x]

    phat = np.zeros((nx1, nx2, nw, ny, nz))
    err = 0.0
    for b1, b2 in itertools.product(range(nb1), range(nb2)):
        for x1, x2, w in itertools.product(range(nx1), range(nx2), range(nw)):
            if qx[x1, x2, w] == 0:
                continue
            e1, e2 = enc(prior1, x1, b1, bin1), enc(prior2, x2, b2, bin2)
            for a1, a2 in itertools.product(range(len(A1)), range(len(A2))):
                m = qx[x1, x2, w] * e1[a1] * e2[a2] / (nb1 * nb2)
                if m == 0:
                    continue
                v1, v2 = A1[a1][1], A2[a2][1]
                for yt in range(nyt):
                    pyt = cv[v1, v2, yt]
                    if pyt.sum() == 0:
                        continue
                    h1, h2 = decode(b1, b2, w, yt)
                    if (h1, h2) != (a1, a2):
                        err += m * pyt.sum()
                    phat[x1, x2, w] += m * py[A1[h1][0], A2[h2][0], w][:, None] * pyt[None, :]
    flat = phat.reshape(-1, nz)
    pz = flat.sum(axis=0)
    tv = 0.5 * np.abs(flat - q.reshape(-1)[:, None] * pz[None, :]).sum()
    pr = flat.sum(axis=1)
    nzm = flat > 0
    leak = float((flat[nzm] * np.log2(flat[nzm] / (pr[:, None] * pz[None, :])[nzm])).sum())
    return tv, leak, err


def cfg_of(cert, rates, n=1, seed=0, **kw):
    return sim.ProtocolConfig(n, cert, rates, seed=seed, **kw)


# ---------------------------------------------------------------- bins


def test_bin_counts():
    assert sim.bin_count(3, 0.0) == 1
    assert sim.bin_count(1, 2.0) == 4
    assert sim.bin_count(2, 0.4) == 2
    assert sim.bin_count(4, 0.5) == 4
    with pytest.raises(DomainError):
        sim.bin_count(1, -0.1)


def test_zero_rate_single_bin():
    cfg = cfg_of(example1.protocol_inner(), (0.0, 0.0, 0.0, 0.0), n=2)
    b = sim.sample_bins(cfg)
    assert b.counts == (1, 1, 1, 1)
    assert not b.k1.any() and not b.joint(2).any()


def test_bin_occupancy_uniform():
    cert = example1.nocrib_inner()
    cfg = cfg_of(cert, (2.0, 0.0, 0.0, 0.0))
    counts = np.zeros((4, 4))
    for s in range(1000):
        b = sim.sample_bins(cfg.with_n(1, seed=s))
        assert b.counts == (4, 1, 1, 1)
        counts += np.eye(4)[b.k1]
    # each of the 4 pairs lands in each bin with probability 1/4
    _, pval = stats.chisquare(counts.ravel())
    assert pval > 1e-3


def test_bins_deterministic():
    cfg = cfg_of(example1.protocol_inner(), example1.protocol_rates(), n=2, seed=9)
    a, b = sim.sample_bins(cfg), sim.sample_bins(cfg)
    for x, y in zip((a.k1, a.f1, a.k2, a.f2), (b.k1, b.f1, b.k2, b.f2)):
        assert np.array_equal(x, y)


# ---------------------------------------------------------------- exact engine


@pytest.mark.parametrize("seed", range(4))
def test_exact_matches_one_shot_oracle(seed):
    cert = example1.protocol_inner()
    rates = example1.protocol_rates()
    cfg = cfg_of(cert, (rates[0], rates[1], 0.6, 0.3), seed=seed)
    bins = sim.sample_bins(cfg)
    rec = sim.run_exact(cfg, bins)
    tv, leak, err = one_shot_oracle(cert, bins)
    assert abs(rec.tv_coord - tv) <= 1e-12
    assert abs(rec.leakage - leak) <= 1e-12
    assert abs(rec.sw_error - err) <= 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_exact_matches_oracle_random_factorizations(seed):
    rng = np.random.default_rng(seed)
    cert = random_factorization(Kind.INNER, rng, legit="single" if seed % 2 else "pair")
    rates = tuple(float(r) for r in rng.uniform(0, 2, size=4))
    cfg = cfg_of(cert, rates, seed=seed)
    bins = sim.sample_bins(cfg)
    rec = sim.run_exact(cfg, bins)
    tv, leak, err = one_shot_oracle(cert, bins)
    assert abs(rec.tv_coord - tv) <= 1e-12
    assert abs(rec.leakage - leak) <= 1e-12
    assert abs(rec.sw_error - err) <= 1e-12


def test_identity_protocol_exact_recovery():
    # U = X, V = Xt uniform bits, perfect links. One bit of F per encoder with
    # bin(u, v) = u xor v: the decoder reads v off the link and recovers u.
    cert = example1.nocrib_inner()
    cfg = cfg_of(cert, (0.0, 0.0, 1.0, 1.0))
    xor = np.array([0, 1, 1, 0])  # a = 2u + v
    zero = np.zeros(4, int)
    bins = sim.BinMaps(zero, xor, zero.copy(), xor.copy(), (1, 2, 1, 2))
    rec = sim.run_exact(cfg, bins)
    tv, leak, err = one_shot_oracle(cert, bins)
    assert rec.sw_error == 0.0 and err == 0.0
    assert rec.empty_bins == 0
    assert abs(rec.tv_coord - tv) <= 1e-12
    # v = u xor f is independent of x, so nothing reaches the eavesdropper
    assert rec.tv_coord <= 1e-12 and rec.leakage <= 1e-12


def test_trivial_target_leaks_nothing():
    x = [pc.Alphabet.of_size("X1", 2), pc.Alphabet.of_size("X2", 2), pc.Alphabet.of_size("W", 1),
         pc.Alphabet.of_size("Y", 1)]
    q = pc.make_joint(x, np.full((2, 2, 1, 1), 0.25))
    t = pc.Alphabet.of_size("T", 1)
    one = lambda name: pc.Alphabet.of_size(name, 1)  # noqa: E731
    f = {
        "U1": pc.make_kernel([x[0], t], [one("U1")], np.ones((2, 1, 1))),
        "U2": pc.make_kernel([x[1], t], [one("U2")], np.ones((2, 1, 1))),
        "V1": pc.make_kernel([t], [one("V1")], [1.0]),
        "V2": pc.make_kernel([t], [one("V2")], [1.0]),
        "Xt1": pc.make_kernel([one("V1"), t], [one("Xt1")], [1.0]),
        "Xt2": pc.make_kernel([one("V2"), t], [one("Xt2")], [1.0]),
        "channel": pc.make_kernel([one("Xt1"), one("Xt2")], [one("Yt"), one("Zt")], [1.0]),
        "decoder": pc.make_kernel([one("U1"), one("U2"), x[2], t], [x[3]], [1.0]),
    }
    cert = AuxiliaryFactorization(Kind.INNER, uniform_t(1), f, q)
    for n in (1, 3):
        rec = sim.run_exact(cfg_of(cert, (0.0, 0.0, 0.0, 0.0), n=n))
        assert rec.tv_coord <= 1e-12 and rec.leakage <= 1e-12 and rec.sw_error == 0.0


def test_starved_rates_keep_decoding_errors():
    cert = example1.protocol_inner()
    errs = [sim.run_exact(cfg_of(cert, (0.0, 0.0, 0.0, 0.0), n=n, seed=s)).sw_error
            for n in (1, 2) for s in range(3)]
    assert min(errs) > 0.1


def test_induced_law_normalized():
    cert = example1.protocol_inner()
    rec = sim.run_exact(cfg_of(cert, example1.protocol_rates(), n=2, seed=4))
    assert 0.0 <= rec.tv_coord <= 1.0
    assert rec.best_f_tv is None or rec.best_f_tv <= rec.tv_coord + 1e-12


def test_per_f_diagnostics():
    cert = example1.protocol_inner()
    rec = sim.run_exact(cfg_of(cert, (0.8, 0.8, 1.0, 1.0), seed=2))
    assert rec.extraction_kl is not None and rec.extraction_kl >= 0
    assert rec.best_f_tv is not None


def test_config_validation():
    cert = example1.protocol_inner()
    with pytest.raises(DomainError):
        sim.ProtocolConfig(1, example1.nocrib_thm3(), (0, 0, 0, 0))
    with pytest.raises(DomainError):
        sim.ProtocolConfig(1, cert, (0, 0, 0, 0), mode="montecarlo")
    with pytest.raises(DomainError):
        sim.ProtocolConfig(1, cert, (math.inf, 0, 0, 0))
    two_t = AuxiliaryFactorization(Kind.INNER, uniform_t(2), *_two_t_factors(cert))
    with pytest.raises(DomainError):
        sim.run_exact(sim.ProtocolConfig(1, two_t, (0, 0, 0, 0)))


def _two_t_factors(cert):
    t = pc.Alphabet.of_size("T", 2)
    f = {}
    for role, k in cert.factors.items():
        if "T" in k.input_names:
            ax = k.input_names.index("T")
            f[role] = pc.make_kernel([t if a.name == "T" else a for a in k.inputs], k.outputs,
                                     np.repeat(k.probs, 2, axis=ax))
        else:
            f[role] = k
    return f, cert.target


def test_enumeration_cap():
    cert = example1.protocol_inner()
    with pytest.raises(EnumerationTooLarge):
        sim.run_exact(cfg_of(cert, example1.protocol_rates(), n=9))


# ---------------------------------------------------------------- Monte Carlo


@pytest.mark.parametrize("n", [1, 2])
def test_mc_agrees_with_exact(n):
    cert = example1.protocol_inner()
    cfg = cfg_of(cert, example1.protocol_rates(), n=n, seed=1)
    bins = sim.sample_bins(cfg)
    exact = sim.run_exact(cfg, bins)
    mc = sim.run_mc(cfg, bins, samples=200_000)
    assert mc.reliable
    assert abs(mc.sw_error - exact.sw_error) <= 3 * mc.se_sw + 1e-12
    assert abs(mc.leakage - exact.leakage) <= 3 * mc.se_leakage + 1e-3
    # plug-in TV is biased upward by the finite sample
    assert exact.tv_coord - 3 * mc.se_tv <= mc.tv_coord <= exact.tv_coord + 3 * mc.se_tv + 0.02


def test_mc_single_sample_unreliable():
    cfg = cfg_of(example1.protocol_inner(), example1.protocol_rates(), mode="montecarlo", samples=1)
    rec = sim.run_mc(cfg)
    assert not rec.reliable
    assert math.isnan(rec.se_tv)
    assert rec.sw_error in (0.0, 1.0)


def test_mc_seed_determinism():
    cfg = cfg_of(example1.protocol_inner(), example1.protocol_rates(), n=2, seed=5,
                 mode="montecarlo", samples=5000)
    a, b = sim.run_mc(cfg), sim.run_mc(cfg)
    assert a.to_json() == b.to_json()


# ---------------------------------------------------------------- sweeps and reports


def test_sweep_single_n_and_csv():
    cfg = cfg_of(example1.protocol_inner(), example1.protocol_rates())
    rep = sim.sweep_blocklengths(cfg, [1], seeds=3)
    assert len(rep.records) == 1 and rep.records[0].seeds == 3
    lines = rep.to_csv().splitlines()
    assert lines[0] == "n,tv_coord,leakage_bits,sw_error,extraction_kl,se_tv,se_leakage,se_sw"
    assert len(lines) == 2
    assert sim.sweep_blocklengths(cfg, [1], seeds=3).to_csv() == rep.to_csv()


def test_rate_slacks_margins():
    cfg = cfg_of(example1.protocol_inner(), example1.protocol_rates())
    assert min(sim.rate_slacks(cfg).values()) >= 0.05
    bad = cfg_of(example1.protocol_inner(), example1.protocol_rates(placement=None))
    assert min(sim.rate_slacks(bad).values()) <= -0.5


# ---------------------------------------------------------------- extraction


def dsbs(p):
    a = pc.Alphabet.of_size("A", 2)
    return pc.make_joint([a, a.renamed("B")], [[(1 - p) / 2, p / 2], [p / 2, (1 - p) / 2]])


def test_binning_kl_balanced_map_is_zero():
    # B uniform and independent of A: a balanced map gives an exactly uniform index
    pn = np.full((2, 4), 1 / 8)
    kl, tv = sim.binning_kl(pn, np.array([0, 1, 0, 1]), 2)
    assert kl == 0.0 and tv == 0.0


def test_binning_kl_occupancy_formula(rng):
    # with B uniform and independent of A, KL = log K - H(occupancy)
    pn = np.full((3, 8), 1 / 24)
    for _ in range(20):
        phi = rng.integers(0, 4, size=8)
        occ = np.bincount(phi, minlength=4) / 8
        h = -sum(o * math.log2(o) for o in occ if o > 0)
        kl, _ = sim.binning_kl(pn, phi, 4)
        assert abs(kl - (2.0 - h)) <= 1e-12


def test_extraction_records_and_pinsker():
    recs = sim.extraction_test(dsbs(0.2), 0.4, [2, 4], seeds=20)
    assert [r.bins for r in recs] == [2, 4]
    assert all(r.pinsker_ok for r in recs)
    high = sim.extraction_test(dsbs(0.2), 1.1, [2, 4, 6], seeds=10)
    assert min(r.kl for r in high) >= 0.05


def test_extraction_needs_pair_source():
    with pytest.raises(Exception):
        sim.extraction_test(example1.target(), 0.4, [2])
