import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smdetect.corrmodel import SpatialModel, SystemConfig, TemporalModel, spatial_correlation, vec
from smdetect.detectors import (
    Detector,
    DetectorKind,
    build_statistics,
    dd_statistics,
    detect_full_search,
    detect_two_stage,
    general_metrics,
    mb_statistics,
    reduced_statistics,
)
from smdetect.detectors import _full_metrics
from smdetect.errors import UnsupportedOrder
from smdetect.linalg import inv_cholesky
from smdetect.smcodec import enumerate_candidates, map_bits

STATIC = TemporalModel.static()
JAKES = TemporalModel.jakes()


def cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def expo_phi(c, r, t):
    return spatial_correlation(SpatialModel.exponential(r, t), c)


def random_block(rng, c):
    return map_bits(rng.integers(0, 2, c.bits_per_block), c)


def draw_observation(rng, model, c, X):
    """(Y, H_hat) drawn from the joint model through an independent factorisation."""
    n = model.dim
    joint = np.block([[model.phi, model.c * model.phi], [model.c * model.phi.conj().T, model.sigma22]])
    w, u = np.linalg.eigh(0.5 * (joint + joint.conj().T))
    z = (u * np.sqrt(np.clip(w, 0, None))) @ cn(rng, 2 * n)
    h, h_hat = z[:n], z[n:]
    H = h.reshape(c.n_tx, c.n_rx).T
    Y = H @ X + math.sqrt(c.noise_var) * cn(rng, (c.n_rx, X.shape[1]))
    return Y, h_hat.reshape(c.n_tx, c.n_rx).T, H


def test_kind_parse_and_binding():
    assert DetectorKind.parse("ceeamlmb") is DetectorKind.CEEA_ML_MB
    assert DetectorKind.ZRC_MB.for_estimator("DD") is DetectorKind.ZRC_DD
    assert DetectorKind.MISMATCHED.for_estimator("DD") is DetectorKind.MISMATCHED
    assert DetectorKind.TWO_STAGE_ZRC_DD.side == "zrc" and DetectorKind.TWO_STAGE_ZRC_DD.two_stage
    with pytest.raises(ValueError):
        DetectorKind.parse("Sphere")


def test_two_stage_rejects_qam():
    c = SystemConfig(2, 2, 2, 5, 16, "QAM")
    with pytest.raises(UnsupportedOrder):
        Detector("TwoStageMb", c, temporal=JAKES)


def test_mb_static_noiseless_limit():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=1e-12)
    _, _, phi = expo_phi(c, 0.5, 0.3)
    m = mb_statistics(3, c, phi, STATIC)
    assert np.allclose(m.A, np.eye(4), atol=1e-9)
    X = random_block(np.random.default_rng(0), c).X
    # Psi is O(sigma^2) here, so C -> 0 at the same rate as sigma^2 I
    assert np.abs(m.covariance(X)).max() < 1e-10


def test_mb_sigma22_at_pilot_node():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=0.3)
    _, _, phi = expo_phi(c, 0.5, 0.3)
    m = mb_statistics(0, c, phi, JAKES)
    assert np.allclose(m.sigma22, phi + 0.3 * np.eye(4))


def test_dd_decorrelated():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=0.2)
    _, _, phi = expo_phi(c, 0.5, 0.3)
    m = dd_statistics(c, phi, lambda lag: 1.0 if lag == 0 else 0.0)
    X = random_block(np.random.default_rng(1), c).X
    assert np.allclose(m.A, 0)
    assert np.allclose(m.mean(X, np.ones((2, 2))), 0)
    xk = np.kron(X.T, np.eye(2))
    assert np.allclose(m.covariance(X), 0.2 * np.eye(4) + xk @ phi @ xk.conj().T)


def test_dd_noiseless_static_limit():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=1e-12)
    m = dd_statistics(c, np.eye(4), STATIC)
    assert np.allclose(m.A, np.eye(4), atol=1e-9)
    assert np.allclose(m.psi_cond, 0, atol=1e-9)


@pytest.mark.parametrize("estimator", ["MB", "DD"])
def test_conditional_covariance_monte_carlo(estimator):
    """Residual h - A h_hat has covariance Psi and is uncorrelated with h_hat."""
    c = SystemConfig(2, 2, 2, 5, 2, doppler=0.01, noise_var=0.2)
    model = mb_statistics(2, c, np.eye(4), JAKES) if estimator == "MB" else dd_statistics(c, np.eye(4), JAKES)
    n, runs = 4, 100_000
    joint = np.block([[model.phi, model.c * model.phi], [model.c * model.phi, model.sigma22]])
    rng = np.random.default_rng(2)
    z = cn(rng, (runs, 2 * n)) @ np.linalg.cholesky(joint).T
    h, h_hat = z[:, :n], z[:, n:]
    X = np.array([[1, 0], [0, -1]], dtype=complex)
    xk = np.kron(X.T, np.eye(2))
    resid = (h - h_hat @ model.A.T) @ xk.T + math.sqrt(c.noise_var) * cn(rng, (runs, n))
    emp = resid.T @ resid.conj() / runs
    prod = resid[:, :, None] * resid[:, None, :].conj()
    se = np.sqrt(prod.real.var(axis=0) / runs) + np.sqrt(prod.imag.var(axis=0) / runs)
    assert np.all(np.abs(emp - model.covariance(X)) < 3 * se + 1e-12)
    cross = resid.T @ h_hat.conj() / runs
    assert np.abs(cross).max() < 5 / math.sqrt(runs)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.sampled_from([("PSK", 2), ("PSK", 4), ("QAM", 16)]),
    st.sampled_from(["MB", "DD"]),
    st.sampled_from(["full", "zrc"]),
    st.floats(0.0, 0.9),
    st.floats(0.0, 0.9),
)
def test_engine_matches_literal_metric(seed, mod, estimator, side, r, t):
    kind, order = mod
    c = SystemConfig(2, 2, 2, 5, order, kind, noise_var=0.3)
    phi_t, phi_r, phi = expo_phi(c, r, t)
    if side == "full":
        model = mb_statistics(2, c, phi, JAKES) if estimator == "MB" else dd_statistics(c, phi, JAKES)
    else:
        model = reduced_statistics("zrc", estimator, c, phi_t, JAKES, k=2)
    stats = build_statistics(model, c, side)
    rng = np.random.default_rng(seed)
    Y, H_hat = cn(rng, (2, 2)), cn(rng, (2, 2))
    fast = _full_metrics(stats, Y, H_hat).ravel()
    slow = general_metrics(Y, H_hat, stats)
    assert np.allclose(fast, slow, rtol=1e-9, atol=1e-9)


def test_literal_metric_from_first_principles():
    """general_metrics equals the textbook Gaussian negative log-likelihood (up to a constant)."""
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=0.4)
    _, _, phi = expo_phi(c, 0.7, 0.4)
    model = mb_statistics(3, c, phi, JAKES)
    stats = build_statistics(model, c, "full")
    rng = np.random.default_rng(3)
    Y, H_hat = cn(rng, (2, 2)), cn(rng, (2, 2))
    cands = stats.candidates
    ref = []
    for X in cands.X:
        m = np.kron(X.T, np.eye(2)) @ model.A @ vec(H_hat)
        C = model.covariance(X)
        d = vec(Y) - m
        ref.append((d.conj() @ np.linalg.solve(C, d)).real + np.linalg.slogdet(C)[1])
    assert np.allclose(general_metrics(Y, H_hat, stats), ref, atol=1e-9)


def test_ztc_structure_under_transmit_white():
    """With Phi_T = I the full model factors as I kron (ZTC model)."""
    c = SystemConfig(2, 3, 2, 5, 4, noise_var=0.2)
    _, phi_r, phi = spatial_correlation(SpatialModel.explicit(phi_t=np.eye(2), phi_r=expo_phi(c, 0.6, 0)[1]), c)
    full = mb_statistics(3, c, phi, JAKES)
    ztc = reduced_statistics("ztc", "MB", c, phi_r, JAKES, k=3)
    assert np.allclose(full.A, np.kron(np.eye(2), ztc.A))
    zstats = build_statistics(ztc, c, "ztc")
    c_bar = np.linalg.inv(zstats.W_cand.conj().T @ zstats.W_cand)
    cands = enumerate_candidates(c)
    for i in range(len(cands)):
        if len(set(cands.antenna_idx[i])) == c.n_tx:
            assert np.allclose(full.covariance(cands.X[i]), np.kron(np.eye(2), c_bar))


def test_zrc_matches_ztc_on_transposed_config():
    """ZRC with Phi_T = I equals ZTC with Phi_R = I when both sides are white and L is a permutation."""
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=0.3)
    zrc = reduced_statistics("zrc", "MB", c, np.eye(2), JAKES, k=2)
    ztc = reduced_statistics("ztc", "MB", c, np.eye(2), JAKES, k=2)
    assert np.allclose(zrc.A, ztc.A) and np.allclose(zrc.psi_cond, ztc.psi_cond)
    s_zrc = build_statistics(zrc, c, "zrc")
    s_ztc = build_statistics(ztc, c, "ztc")
    rng = np.random.default_rng(4)
    Y, H_hat = cn(rng, (2, 2)), cn(rng, (2, 2))
    cands = s_zrc.candidates
    perm = np.array([len(set(a)) == 2 for a in cands.antenna_idx])
    a = general_metrics(Y, H_hat, s_zrc)[perm]
    b = general_metrics(Y, H_hat, s_ztc)[perm]
    assert np.allclose(a - a.min(), b - b.min(), atol=1e-9)


def test_perfect_csi_noiseless():
    c = SystemConfig(4, 4, 4, 5, 4, noise_var=0.0)
    det = Detector("PerfectCSI", c)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        blk = random_block(rng, c)
        H = cn(rng, (4, 4))
        assert np.array_equal(det.detect(H @ blk.X, H).X, blk.X)


@pytest.mark.parametrize("estimator", ["MB", "DD"])
def test_degeneracy_ceea_equals_mismatched(estimator):
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=1e-9)
    _, _, phi = expo_phi(c, 0.8, 0.8)
    ceea = Detector(f"CeeaMl{estimator.capitalize()}", c, phi, STATIC)
    mism = Detector("Mismatched", c, phi, STATIC)
    rng = np.random.default_rng(6)
    for _ in range(300):
        blk = random_block(rng, c)
        H = cn(rng, (2, 2))
        Y = H @ blk.X
        a = ceea.detect(Y, H, 3)
        b = mism.detect(Y, H, 3)
        assert a.index == b.index
        assert np.array_equal(a.X, blk.X)


@pytest.mark.parametrize("estimator", ["MB", "DD"])
@pytest.mark.parametrize("mod", [("PSK", 4), ("QAM", 16)])
def test_zrc_equals_ceea_when_receive_white(estimator, mod):
    c = SystemConfig(2, 2, 2, 5, mod[1], mod[0], noise_var=0.3)
    phi_t = expo_phi(c, 0.0, 0.7)[0]
    phi = np.kron(phi_t, np.eye(2))
    ceea = Detector(f"CeeaMl{estimator.capitalize()}", c, phi, JAKES)
    zrc = Detector(f"Zrc{estimator.capitalize()}", c, phi, JAKES)
    rng = np.random.default_rng(7)
    for _ in range(50):
        blk = random_block(rng, c)
        Y, H_hat = cn(rng, (2, 2)), cn(rng, (2, 2))
        assert ceea.detect(Y, H_hat, 4).index == zrc.detect(Y, H_hat, 4).index


def test_argmin_invariant_to_constant_shift():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=0.3)
    _, _, phi = expo_phi(c, 0.5, 0.5)
    stats = build_statistics(mb_statistics(2, c, phi, JAKES), c)
    rng = np.random.default_rng(8)
    Y, H_hat = cn(rng, (2, 2)), cn(rng, (2, 2))
    m = _full_metrics(stats, Y, H_hat)
    assert np.isfinite(m).all()
    assert np.argmin(m) == np.argmin(m + 123.4) == detect_full_search(Y, H_hat, stats).index


def test_cache_matches_recompute():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=0.3)
    _, _, phi = expo_phi(c, 0.5, 0.5)
    det = Detector("CeeaMlMb", c, phi, JAKES)
    rng = np.random.default_rng(9)
    for k in (1, 2, 7):
        Y, H_hat = cn(rng, (2, 2)), cn(rng, (2, 2))
        a = det.detect(Y, H_hat, k)
        b = det.detect(Y, H_hat, k, use_cache=False)
        assert a.index == b.index and a.metric == pytest.approx(b.metric, rel=1e-12)


def test_two_stage_b1_equals_full_search():
    c = SystemConfig(4, 3, 1, 5, 8, noise_var=0.5)
    _, _, phi = expo_phi(c, 0.6, 0.6)
    full = Detector("CeeaMlMb", c, phi, JAKES)
    two = Detector("TwoStageMb", c, phi, JAKES)
    rng = np.random.default_rng(10)
    for _ in range(300):
        Y, H_hat = cn(rng, (3, 1)), cn(rng, (3, 4))
        a, b = full.detect(Y, H_hat, 2), two.detect(Y, H_hat, 2)
        assert a.index == b.index


def test_two_stage_noiseless_recovery():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=1e-10)
    det = Detector("TwoStageMb", c, np.eye(4), STATIC)
    rng = np.random.default_rng(11)
    for _ in range(1000):
        blk = random_block(rng, c)
        H = cn(rng, (2, 2))
        assert np.array_equal(det.detect(H @ blk.X, H, 3).X, blk.X)


def test_two_stage_agreement_at_15db():
    c = SystemConfig(4, 4, 4, 10, 4).with_ebn0_db(15.0)
    _, _, phi = expo_phi(c, 0.5, 0.5)
    full = Detector("CeeaMlMb", c, phi, JAKES)
    two = Detector("TwoStageMb", c, phi, JAKES)
    model = full.model(4)
    rng = np.random.default_rng(12)
    agree = 0
    for _ in range(1000):
        blk = random_block(rng, c)
        Y, H_hat, _ = draw_observation(rng, model, c, blk.X)
        agree += full.detect(Y, H_hat, 4).index == two.detect(Y, H_hat, 4).index
    assert agree >= 950


def test_two_stage_pinv_fallback_counts():
    c = SystemConfig(2, 2, 2, 5, 4, noise_var=0.1)
    stats = build_statistics(mb_statistics(2, c, np.eye(4), JAKES), c)
    dec = detect_two_stage(np.zeros((2, 2), complex), np.zeros((2, 2), complex), stats)
    assert dec.n_singular == stats.candidates.n_patterns


def test_smx_noiseless():
    c = SystemConfig(2, 2, 2, 5, 2, signal="SMX", noise_var=1e-10)
    det = Detector("CeeaMlMb", c, np.eye(4), STATIC)
    rng = np.random.default_rng(13)
    for _ in range(100):
        blk = random_block(rng, c)
        H = cn(rng, (2, 2))
        assert np.array_equal(det.detect(H @ blk.X, H, 2).X, blk.X)


def test_inverse_cholesky_logdet_used_by_groups():
    c = SystemConfig(2, 2, 2, 5, 16, "QAM", noise_var=0.2)
    stats = build_statistics(dd_statistics(c, np.eye(4), JAKES), c)
    assert len(stats.groups) == 9  # three energy levels per slot
    for grp in stats.groups:
        assert np.isfinite(grp.logdet).all()
        _, ld = inv_cholesky(np.linalg.inv(grp.W[0].conj().T @ grp.W[0]))
        assert ld == pytest.approx(grp.logdet[0], abs=1e-8)
