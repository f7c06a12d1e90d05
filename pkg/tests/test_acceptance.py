"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import dataclasses
import math
import warnings

import numpy as np
import pytest
import scipy.special as spc

from smdetect.analysis import QuadFormSpec, ber_average, ber_union_bound, block_indices, pep_conditional, quadratic_form_cdf
from smdetect.chest import MBWindow, estimate_spatial_correlation, ls_pilot_estimate, mb_estimate
from smdetect.corrmodel import SpatialModel, SystemConfig, TemporalModel, generate_channels, spatial_correlation, vec
from smdetect.detectors import Detector, DetectorKind, mb_statistics
from smdetect.errors import BudgetExceeded
from smdetect.harness import StopRule, parse_scenario, preset_scenario, run_sweep, write_results
from smdetect.smcodec import enumerate_candidates, map_bits

JAKES = TemporalModel.jakes()
STATIC = TemporalModel.static()


def cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def random_block(rng, c):
    return map_bits(rng.integers(0, 2, c.bits_per_block), c)


def crossing_db(snr, ber, target=1e-2):
    """First SNR at which ``ber`` falls through ``target``, log-linear in BER."""
    logs = np.log10(ber)
    for i in range(len(snr) - 1):
        if ber[i] >= target > ber[i + 1]:
            frac = (logs[i] - math.log10(target)) / (logs[i] - logs[i + 1])
            return snr[i] + frac * (snr[i + 1] - snr[i])
    return math.nan


def mb_window_estimate(rng, c, H, k, N):
    """MB estimate of block ``k`` from noisy pilots at epochs 0, N, 2N of ``H``."""
    obs = np.stack([math.sqrt(c.pilot_power) * H[j] + math.sqrt(c.noise_var) * cn(rng, H[j].shape) for j in (0, N, 2 * N)])
    return mb_estimate(MBWindow(0, N, obs, c.pilot_power), k).H_hat


# ---------------------------------------------------------------------------
# 1. pilot-density gain
# ---------------------------------------------------------------------------

GRID_1 = {10: (6.0, 8.0, 10.0, 12.0), 20: (10.0, 12.0, 14.0, 16.0, 18.0)}


def test_01_pilot_density_gain(report):
    cross = {}
    for N, grid in GRID_1.items():
        sc = preset_scenario("fig-MB-16QAM-r08")
        sc = dataclasses.replace(
            sc,
            cfg=dataclasses.replace(sc.cfg, frame_len=N),
            frame_lens=(),
            detectors=(DetectorKind.CEEA_ML_MB,),
            snr_db=grid,
            stop=StopRule(300, 4_000_000),
        )
        curve = run_sweep(sc)
        ber = curve.ber("CeeaMlMb")
        assert all(curve.errors("CeeaMlMb", s) >= 100 for s in grid)
        cross[N] = crossing_db(np.array(grid), ber)
        print(f"N={N}: " + ", ".join(f"{s:g} dB {b:.3e}" for s, b in zip(grid, ber)))
    gap = cross[20] - cross[10]
    ok = abs(gap - 3.5) <= 1.0
    report(1, ok, f"gap at BER 1e-2 = {gap:.2f} dB (N=10 {cross[10]:.2f} dB, N=20 {cross[20]:.2f} dB); target 3.5 +/- 1.0")
    assert ok


# ---------------------------------------------------------------------------
# 2. ZRC equals CEEA-ML when the receive side is white
# ---------------------------------------------------------------------------


def test_02_zrc_equals_ceea(report):
    agree = {}
    for est in ("MB", "DD"):
        for n_rx, M in ((2, 4), (4, 2)):
            c = SystemConfig(2, n_rx, 2, 5, M, doppler=0.01).with_ebn0_db(6.0)
            phi_t = spatial_correlation(SpatialModel.exponential(0.0, 0.8), c)[0]
            phi = np.kron(phi_t, np.eye(n_rx))
            ceea = Detector(f"CeeaMl{est.capitalize()}", c, phi, JAKES)
            zrc = Detector(f"Zrc{est.capitalize()}", c, phi, JAKES)
            rng = np.random.default_rng(20 + n_rx)
            same = 0
            for _ in range(200):
                H = generate_channels(c, SpatialModel.explicit(phi), JAKES, 2 * c.frame_len + 1, rng).blocks
                X = random_block(rng, c).X
                if est == "MB":
                    k = int(rng.choice(block_indices("MB", c.frame_len)))
                    H_hat = mb_window_estimate(rng, c, H, k, c.frame_len)
                else:
                    k = 1
                    Yp = math.sqrt(c.pilot_power) * H[0] + math.sqrt(c.noise_var) * cn(rng, H[0].shape)
                    H_hat = ls_pilot_estimate(Yp, c).H_hat
                Y = H[k] @ X + math.sqrt(c.noise_var) * cn(rng, (c.n_rx, c.block_len))
                same += ceea.detect(Y, H_hat, k).index == zrc.detect(Y, H_hat, k).index
            agree[(est, n_rx)] = same
    ok = all(v == 200 for v in agree.values())
    detail = ", ".join(f"{e} N_R={n}: {v}/200" for (e, n), v in agree.items())
    report(2, ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# 3. degeneracy chain
# ---------------------------------------------------------------------------


def test_03_degeneracy_chain(report):
    c = SystemConfig(2, 4, 2, 5, 4, noise_var=1e-8)
    phi = spatial_correlation(SpatialModel.exponential(0.8, 0.8), c)[2]
    dets = [Detector(k, c, phi, STATIC) for k in ("CeeaMlMb", "Mismatched", "PerfectCSI")]
    rng = np.random.default_rng(3)
    ks = block_indices("MB", c.frame_len)
    same = 0
    for _ in range(1000):
        H = generate_channels(c, SpatialModel.explicit(phi), STATIC, 2 * c.frame_len + 1, rng).blocks
        k = int(rng.choice(ks))
        H_hat = mb_window_estimate(rng, c, H, k, c.frame_len)
        X = random_block(rng, c).X
        Y = H[k] @ X + math.sqrt(c.noise_var) * cn(rng, (c.n_rx, c.block_len))
        idx = {dets[0].detect(Y, H_hat, k).index, dets[1].detect(Y, H_hat, k).index, dets[2].detect(Y, H[k], k).index}
        same += len(idx) == 1

    coef = cn(rng, (3, 4, 2))
    quad = lambda k: coef[0] * k**2 + coef[1] * k + coef[2]
    win = MBWindow(0, 5, np.stack([quad(0), quad(5), quad(10)]), 1.0)
    recon = max(np.abs(mb_estimate(win, k).H_hat - quad(k)).max() for k in range(10))

    ok = same == 1000 and recon < 1e-10
    report(3, ok, f"identical decisions {same}/1000; quadratic reconstruction error {recon:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 4. quadratic-form CDF
# ---------------------------------------------------------------------------


def test_04_quadratic_form_cdf(report):
    e1 = abs(quadratic_form_cdf(QuadFormSpec([1.0], [0.0], 1.3)) - (1 - math.exp(-1.3)))
    e2 = abs(quadratic_form_cdf(QuadFormSpec([0.7, 0.7], [0.0, 0.0], 2.0)) - (1 - (1 + 2.0 / 0.7) * math.exp(-2.0 / 0.7)))

    rng = np.random.default_rng(44)
    lam = rng.uniform(0.3, 2.0, 6) * np.array([1, -1, 1, -1, 1, 1])
    mu = 0.7 * cn(rng, 6)
    thresholds = np.array([-4.0, -1.5, 0.0, 2.0, 6.0])
    n, chunk = 10_000_000, 1_000_000
    hits = np.zeros(thresholds.size, dtype=np.int64)
    for _ in range(n // chunk):
        q = np.zeros(chunk)
        for l, m in zip(lam, mu):
            q += l * np.abs(cn(rng, chunk) + m) ** 2
        hits += (q[:, None] <= thresholds).sum(axis=0)
    p_hat = hits / n
    se = np.sqrt(p_hat * (1 - p_hat) / n)
    cdf = np.array([quadratic_form_cdf(QuadFormSpec(lam, mu, x)) for x in thresholds])
    z = np.abs(cdf - p_hat) / se

    ok = e1 < 1e-8 and e2 < 1e-8 and np.all(z < 3)
    report(4, ok, f"closed-form errors {e1:.1e}, {e2:.1e}; max |z| over 5 thresholds {z.max():.2f}")
    assert ok


# ---------------------------------------------------------------------------
# 5. union-bound validity
# ---------------------------------------------------------------------------

GRID_5 = (14.0, 16.0, 18.0, 20.0, 22.0)


def test_05_union_bound_validity(report):
    doc = {
        "n_tx": 2, "n_rx": 2, "block_len": 2, "frame_len": 5, "mod_kind": "PSK", "mod_order": 2,
        "doppler": 0.01, "spatial": {"kind": "exponential", "params": {"r": 0.8, "t": 0.8}},
        "estimator": "MB", "detectors": ["CeeaMl"], "snr_db": list(GRID_5), "stats_mode": "genie",
        "seed": 55, "stop": {"min_errors": 1000, "max_bits": 3_000_000},
    }
    sc = parse_scenario(doc)
    curve = run_sweep(sc)
    points = [s for s in GRID_5 if 1e-3 <= curve.ber("CeeaMlMb", s) <= 1e-2]
    assert points, "no SNR point with simulated BER in [1e-3, 1e-2]"
    ks = block_indices("MB", 5)
    phi = spatial_correlation(SpatialModel.exponential(0.8, 0.8), sc.cfg)[2]
    below, lines = [], []
    for s in points:
        c = sc.cfg.with_ebn0_db(s)
        sim = curve.ber_k("CeeaMlMb", s)
        ub = {k: ber_union_bound(k, c, phi, JAKES, n_mc=2000, rng=500 + k) for k in ks}
        bound = {k: u.value for k, u in ub.items()}
        bits = curve.bits("CeeaMlMb", s) // len(ks)
        for k in ks:
            if bound[k] < sim[k]:
                # shortfall in units of the combined bound and simulation standard error
                se = math.hypot(ub[k].stderr, math.sqrt(sim[k] * (1 - sim[k]) / bits))
                below.append(f"{s:g} dB k={k} ({(sim[k] - bound[k]) / se:.1f} SE)")
        avg_b, avg_s = ber_average(bound, "MB", 5), ber_average(sim, "MB", 5)
        lines.append((s, avg_b, avg_s))
        print(f"{s:g} dB: " + " ".join(f"k={k} {bound[k]:.2e}/{sim[k]:.2e}" for k in ks))
    top_s, top_b, top_sim = lines[-1]
    ratio = top_b / top_sim
    ok = not below and ratio <= 5.0
    report(5, ok, f"points {points}; bound < sim at {below or 'none'}; bound/sim at {top_s:g} dB = {ratio:.2f} (limit 5)")
    assert ok


# ---------------------------------------------------------------------------
# 6. detector ordering
# ---------------------------------------------------------------------------


def test_06_detector_ordering(report):
    sc = preset_scenario(
        "fig-MB-exp-r08", frame_len=10, detectors=["CeeaMl", "Mismatched", "TwoStage"], snr_db=[15],
        stop={"min_errors": 400, "max_bits": 5_000_000},
    )
    curve = run_sweep(sc)
    ber = {d: curve.ber(d, 15.0) for d in curve.detectors}
    ci = {d: curve.ci(d, 15.0) for d in curve.detectors}
    separated = ci["CeeaMlMb"][1] < ci["Mismatched"][0]
    ratio = ber["TwoStageMb"] / ber["CeeaMlMb"]
    ok = ber["CeeaMlMb"] < ber["Mismatched"] and separated and ratio <= 1.5
    report(6, ok, f"CEEA {ber['CeeaMlMb']:.2e} CI {ci['CeeaMlMb'][0]:.2e}-{ci['CeeaMlMb'][1]:.2e}; "
                  f"mismatched {ber['Mismatched']:.2e} CI {ci['Mismatched'][0]:.2e}-{ci['Mismatched'][1]:.2e}; "
                  f"two-stage/CEEA {ratio:.2f}")
    assert ok


# ---------------------------------------------------------------------------
# 7. conditional PEP against decision frequency
# ---------------------------------------------------------------------------


def test_07_conditional_pep(report):
    c = SystemConfig(2, 2, 2, 5, 4, doppler=0.01).with_ebn0_db(0.0)
    phi = spatial_correlation(SpatialModel.exponential(0.8, 0.8), c)[2]
    model = mb_statistics(3, c, phi, JAKES)
    cands = enumerate_candidates(c)
    X, X2 = cands.X[0], cands.X[5]
    rng = np.random.default_rng(77)
    H_hat = cn(rng, (2, 2))
    p = pep_conditional(X, X2, H_hat, model, c)

    h = vec(H_hat)
    stats = []
    for Z in (X, X2):
        B = np.kron(Z.T, np.eye(c.n_rx))
        C = model.covariance(Z)
        stats.append((B @ model.A @ h, np.linalg.inv(C), np.linalg.slogdet(C)[1]))
    L = np.linalg.cholesky(model.covariance(X))
    n, chunk, wins = 1_000_000, 200_000, 0
    for _ in range(n // chunk):
        y = stats[0][0] + cn(rng, (chunk, L.shape[0])) @ L.T
        m = [np.einsum("si,ij,sj->s", (y - mu).conj(), Ci, y - mu).real + ld for mu, Ci, ld in stats]
        wins += int(np.sum(m[1] < m[0]))
    f = wins / n
    z = abs(p - f) / math.sqrt(p * (1 - p) / n)
    ok = z < 3
    report(7, ok, f"PEP {p:.5f}, frequency {f:.5f} over 1e6 draws, |z| = {z:.2f}")
    assert ok


# ---------------------------------------------------------------------------
# 8. spatial-correlation estimator
# ---------------------------------------------------------------------------


def test_08_correlation_estimator(report):
    c = SystemConfig(4, 4, 4, 10, 4, doppler=0.01, noise_var=0.01)
    sp = SpatialModel.exponential(0.8, 0.8)
    rng = np.random.default_rng(88)
    r_hat = []
    for _ in range(100):
        H = generate_channels(c, sp, JAKES, 2 * c.frame_len + 1, rng).blocks
        est = [ls_pilot_estimate(math.sqrt(c.pilot_power) * H[j] + 0.1 * cn(rng, (4, 4)), c) for j in (0, 10, 20)]
        r_hat.append(estimate_spatial_correlation(est, c).r_hat)
    mean = float(np.mean(r_hat))
    ok = abs(mean - 0.8) <= 0.05
    report(8, ok, f"mean r_hat {mean:.4f} over 100 windows (true 0.8, limit 0.05)")
    assert ok


# ---------------------------------------------------------------------------
# 9. channel synthesis moments
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("spatial", [SpatialModel.bessel(0.5), SpatialModel.exponential(0.8, 0.8)], ids=["bessel", "exponential"])
def test_09_channel_moments(report, spatial):
    c = SystemConfig(2, 2, 2, 5, 2, doppler=0.01)
    phi = spatial_correlation(spatial, c)[2]
    rho = spc.j0(2 * math.pi * c.doppler * c.block_len)
    rng = np.random.default_rng(99)
    n = 100_000
    h0 = np.empty((n, 4), complex)
    h1 = np.empty((n, 4), complex)
    for i in range(n):
        blocks = generate_channels(c, spatial, JAKES, 2, rng).blocks
        h0[i], h1[i] = vec(blocks[0]), vec(blocks[1])

    z = []
    iu = np.triu_indices(4)
    prod = (h0[:, :, None] * h0[:, None, :].conj())[:, iu[0], iu[1]]
    target = phi[iu]
    for part in (np.real, np.imag):
        samples = part(prod)
        se = samples.std(axis=0, ddof=1) / math.sqrt(n)
        keep = se > 0
        z.extend(np.abs(samples.mean(axis=0) - part(target))[keep] / se[keep])
    lag = (h1 * h0.conj()).mean(axis=1)
    z_rho = abs(lag.real.mean() - rho) / (lag.real.std(ddof=1) / math.sqrt(n))
    zmax = max(z)
    ok = zmax < 3 and z_rho < 3
    report(9, ok, f"{spatial.kind}: max |z| over Phi entries {zmax:.2f}, rho_T(1) |z| {z_rho:.2f}")
    assert ok


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------


def test_10_determinism(report, tmp_path):
    doc = {
        "n_tx": 2, "n_rx": 2, "block_len": 2, "frame_len": 5, "mod_kind": "PSK", "mod_order": 4,
        "doppler": 0.01, "spatial": {"kind": "exponential", "params": {"r": 0.5, "t": 0.5}},
        "estimator": "MB", "detectors": ["CeeaMl", "Mismatched", "TwoStage"], "snr_db": [0, 5, 10],
        "stats_mode": "genie", "seed": 1010, "stop": {"min_errors": 50, "max_bits": 40_000},
    }
    sc = parse_scenario(doc)
    blobs = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetExceeded)
        for tag, workers in (("a", 1), ("b", 1), ("c", 4)):
            path = tmp_path / f"{tag}.csv"
            write_results(run_sweep(sc, workers=workers), path)
            blobs[tag] = path.read_bytes()
    ok = blobs["a"] == blobs["b"] == blobs["c"]
    report(10, ok, f"two runs and workers 1/4 byte-identical ({len(blobs['a'])} bytes)")
    assert ok
