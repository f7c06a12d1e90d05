"""Pairwise error probabilities and union bounds for the CEEA-ML detectors.

For a transmitted block ``X`` and a competitor ``X'`` the metric difference
``Delta(y) = metric(X') - metric(X)`` is a Hermitian quadratic form in the
received vector.  After whitening the observation noise and diagonalising,
``Delta`` becomes ``sum_i lam_i |v_i + mu_i|^2 + N + const`` with
``v ~ CN(0, I)`` and ``N`` a real Gaussian collecting the directions where
``lam_i = 0``.  Its CDF is evaluated by characteristic-function inversion
(Imhof's method).

Two observation models are available.  ``"exact"`` uses the conditional
law ``y | H_hat ~ CN(m, C)`` that the detector itself assumes.  ``"independent"``
uses ``y | H_hat ~ CN(vec(H_hat X), sigma^2 I + (X^T kron I) Psi_E (X^* kron I))``,
which treats the estimation error as independent of the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional

import numpy as np
from scipy import integrate

from .corrmodel import SystemConfig, as_generator, vec
from .detectors import ConditionalModel, dd_statistics, mb_statistics
from .errors import IntegrationNotConverged, MissingBlockIndex, SearchSpaceTooLarge
from .linalg import cholesky, hermitize
from .smcodec import enumerate_candidates

__all__ = [
    "QuadFormSpec",
    "PairwiseCase",
    "UnionBound",
    "quadratic_form_cdf",
    "quadratic_form_cdf_batch",
    "pairwise_case",
    "pep_conditional",
    "pep_average",
    "pep_average_joint",
    "ber_union_bound",
    "ber_average",
    "block_indices",
    "PAIR_CANDIDATE_CAP",
]

CDF_TOL = 1e-8
PAIR_CANDIDATE_CAP = 2**12
ZERO_EIG = 1e-10


# ---------------------------------------------------------------------------
# quadratic-form CDF
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadFormSpec:
    """``Q = sum_i lam_i |v_i + mu_i|^2 + N(0, linear_std^2)`` with ``v ~ CN(0, I)``.

    The CDF is evaluated at ``threshold``.
    """

    eigenvalues: np.ndarray
    shifts: np.ndarray
    threshold: float
    linear_std: float = 0.0

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        mu = np.atleast_1d(np.asarray(self.shifts, dtype=complex))
        if mu.size == 1 and lam.size > 1:
            mu = np.full(lam.shape, mu[0])
        if lam.shape != mu.shape:
            raise ValueError("eigenvalues and shifts must have the same length")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "shifts", mu)


def _truncation(lam: np.ndarray, tol: float) -> float:
    """Upper limit ``U`` with an integrand tail of at most ``tol``.

    For ``t >= U`` the integrand is bounded by ``1 / (t^(n+1) prod |lam|)``.
    """
    lam = np.abs(lam[lam != 0])
    n = lam.size
    if n == 0:
        return math.inf
    log_u = -(math.log(n * tol * math.pi) + np.log(lam).sum()) / n
    return float(math.exp(log_u))


def _panels(lam_max: float, upper: float, extra: float = 0.0) -> np.ndarray:
    """Log-spaced panel edges from 0 to ``upper``."""
    start = 1e-2 / max(lam_max, extra, 1e-300)
    if upper <= start:
        return np.array([0.0, upper])
    n = int(np.clip(np.ceil(np.log2(upper / start)) + 1, 2, 400))
    return np.concatenate([[0.0], np.geomspace(start, upper, n)])


def _imhof_terms(t, lam, mu2, x, lin_var):
    """Integrand ``sin(theta) / (t rho)`` for arrays broadcast over leading axes."""
    lt = lam * t
    den = 1.0 + lt * lt
    theta = np.sum(np.arctan(lt) + lt * mu2 / den, axis=-1) - t * x
    log_rho = np.sum(0.5 * np.log(den) + lt * lt * mu2 / den, axis=-1) + 0.5 * lin_var * t * t
    return np.sin(theta) * np.exp(-log_rho) / t


def _imhof_limit0(lam, mu2, x):
    """Limit of the integrand at ``t = 0``: ``theta'(0)``."""
    return np.sum(lam * (1.0 + mu2), axis=-1) - x


def _phase_amplitude(t, lam, mu2, lin_var):
    """Slowly varying phase ``phi = theta + x t`` and envelope ``1 / (t rho)``."""
    lt = lam * t
    den = 1.0 + lt * lt
    phi = np.sum(np.arctan(lt) + lt * mu2 / den, axis=-1)
    log_rho = np.sum(0.5 * np.log(den) + lt * lt * mu2 / den, axis=-1) + 0.5 * lin_var * t * t
    return phi, np.exp(-log_rho) / t


def _chernoff_log_tail(lam, mu2, x, lin_var):
    """Log of the Chernoff bound on ``P(Q <= x)``, minimised over a grid of ``s``.

    ``E exp(-s lam |v + mu|^2) = exp(-s lam |mu|^2 / (1 + s lam)) / (1 + s lam)``
    for ``1 + s lam > 0``.  Broadcasts over the leading axis of ``mu2``/``x``.
    """
    neg = -lam[lam < 0]
    if neg.size:
        s = (1.0 - np.geomspace(1e-6, 1.0, 48)[::-1][:-1]) / neg.max()
        s = s[s > 0]
    else:
        s = np.geomspace(1e-4, 1e4, 48) / np.abs(lam).max()
    sl = s[:, None] * lam[None, :]  # (G, n)
    den = 1.0 + sl
    log_mgf = -np.log(den).sum(-1)[None, :] - np.einsum("gn,sn->sg", sl / den, np.atleast_2d(mu2))
    log_mgf = log_mgf + 0.5 * np.atleast_1d(lin_var)[:, None] * s[None, :] ** 2
    return (log_mgf + np.atleast_1d(x)[:, None] * s[None, :]).min(axis=1)


def _settled(lam, mu2, x, lin_var, tol):
    """Specs whose CDF is within ``tol`` of 0 or 1 by a Chernoff bound: ``(is_zero, is_one)``."""
    log_tol = math.log(tol)
    lo = _chernoff_log_tail(lam, mu2, x, lin_var) < log_tol
    hi = _chernoff_log_tail(-lam, mu2, -np.asarray(x, dtype=float), lin_var) < log_tol
    return lo, hi & ~lo


def _oscillation_edges(edges: np.ndarray, x: float, max_panels: int = 4000, periods: float = 4.0) -> np.ndarray:
    """Split panels so that each spans at most ``periods`` periods of ``sin(x t)``."""
    if x == 0:
        return edges
    width = periods * 2.0 * math.pi / abs(x)
    out = [edges[0]]
    for a, b in zip(edges[:-1], edges[1:]):
        n = int(min(max(1, math.ceil((b - a) / width)), max_panels))
        out.extend(np.linspace(a, b, n + 1)[1:])
    return np.asarray(out)


def quadratic_form_cdf(spec: QuadFormSpec, tol: float = CDF_TOL) -> float:
    """``P(Q <= threshold)`` by Imhof inversion.

    ``F(x) = 1/2 - (1/pi) int_0^inf sin(theta(t)) / (t rho(t)) dt`` with

    ``theta(t) = sum_i [atan(lam_i t) + lam_i t |mu_i|^2 / (1 + lam_i^2 t^2)] - x t``

    ``log rho(t) = sum_i [log(1 + lam_i^2 t^2) / 2 + lam_i^2 t^2 |mu_i|^2 / (1 + lam_i^2 t^2)] + s^2 t^2 / 2``.

    The head of the integral is integrated panel by panel.  When the
    envelope decays slowly (few eigenvalues, no Gaussian part) the tail is
    split into ``cos(x t)`` and ``sin(x t)`` weighted Fourier integrals.

    Raises
    ------
    IntegrationNotConverged
        If the adaptive quadrature cannot meet the error target.
    """
    lam = spec.eigenvalues
    keep = lam != 0
    lam, mu2 = lam[keep], np.abs(spec.shifts[keep]) ** 2
    lin_var = float(spec.linear_std) ** 2
    x = float(spec.threshold)
    if lam.size == 0:
        if lin_var == 0:
            raise ValueError("quadratic form needs a nonzero eigenvalue or a linear part")
        from scipy.stats import norm

        return float(norm.cdf(x / math.sqrt(lin_var)))
    lo, hi = _settled(lam, mu2[None, :], x, lin_var, tol / 2)
    if lo[0] or hi[0]:
        return 0.0 if lo[0] else 1.0
    upper = _truncation(lam, tol / 8)
    if lin_var > 0:
        upper = min(upper, math.sqrt(2.0 * math.log(8.0 / (tol * math.pi)) / lin_var) * 1.5)
    head_end = min(upper, 50.0 / float(np.abs(lam).min()))
    use_tail = head_end < upper
    edges = _oscillation_edges(_panels(float(np.abs(lam).max()), head_end, math.sqrt(lin_var)), x)
    lim0 = _imhof_limit0(lam, mu2, x)

    def f(t):
        if t == 0.0:
            return lim0
        return float(_imhof_terms(t, lam, mu2, x, lin_var))

    total = 0.0
    err = 0.0
    panel_tol = tol * math.pi / (8 * len(edges))
    with np.errstate(all="ignore"):
        for a, b in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(f, a, b, epsabs=panel_tol, epsrel=0.0, limit=200)
            total += val
            err += e
        if use_tail:
            def amp_sin(t):
                phi, env = _phase_amplitude(t, lam, mu2, lin_var)
                return float(np.sin(phi) * env)

            def amp_cos(t):
                phi, env = _phase_amplitude(t, lam, mu2, lin_var)
                return float(np.cos(phi) * env)

            tail_tol = tol * math.pi / 8
            if x == 0.0:
                val, e = integrate.quad(amp_sin, head_end, np.inf, epsabs=tail_tol, epsrel=0.0, limit=400)
            else:
                # sin(phi - x t) = sin(phi) cos(x t) - cos(phi) sin(x t)
                v1, e1 = integrate.quad(amp_sin, head_end, np.inf, weight="cos", wvar=x, epsabs=tail_tol, limlst=200)
                v2, e2 = integrate.quad(amp_cos, head_end, np.inf, weight="sin", wvar=x, epsabs=tail_tol, limlst=200)
                val, e = v1 - v2, e1 + e2
            total += val
            err += e
    if not np.isfinite(total) or err > tol * math.pi:
        raise IntegrationNotConverged(f"Imhof integral error estimate {err:.2e} exceeds target")
    return float(np.clip(0.5 - total / math.pi, 0.0, 1.0))


def quadratic_form_cdf_batch(eigenvalues, shifts, thresholds, linear_std=None, tol: float = 1e-7) -> np.ndarray:
    """Vectorised :func:`quadratic_form_cdf` for many specs sharing eigenvalues.

    Parameters
    ----------
    eigenvalues : (n,) array
    shifts : (S, n) complex array
    thresholds : (S,) array
    linear_std : (S,) array, optional
    """
    lam = np.asarray(eigenvalues, dtype=float)
    keep = lam != 0
    lam = lam[keep]
    mu2 = np.abs(np.asarray(shifts)[:, keep]) ** 2
    x = np.asarray(thresholds, dtype=float)
    S = x.shape[0]
    lin_var = np.zeros(S) if linear_std is None else np.asarray(linear_std, dtype=float) ** 2
    if lam.size == 0:
        from scipy.stats import norm

        return norm.cdf(x / np.sqrt(lin_var))
    out = np.zeros(S)
    lo, hi = _settled(lam, mu2, x, lin_var, tol / 2)
    out[hi] = 1.0
    rest = ~(lo | hi)
    if not rest.any():
        return out
    if not rest.all():
        mu_rest = np.asarray(shifts)[rest][:, keep]
        out[rest] = quadratic_form_cdf_batch(lam, mu_rest, x[rest], np.sqrt(lin_var[rest]), tol)
        return out
    limits = _tail_limits(lam, mu2, tol / 4)
    slow = limits > 50.0 / float(np.abs(lam).min())
    mu = np.asarray(shifts)[:, keep]
    lin = np.sqrt(lin_var)
    for i in np.flatnonzero(slow):
        # slowly decaying envelope: the scalar routine handles the tail
        out[i] = quadratic_form_cdf(QuadFormSpec(lam, mu[i], x[i], lin[i]), tol)
    # group by truncation point and oscillation rate so cheap specs are not
    # integrated on the panel grid of the most oscillatory one
    fast = np.flatnonzero(~slow)
    grid = np.concatenate([[0.0], np.geomspace(1e-2 / float(np.abs(lam).max()), float(limits[fast].max()), 24)])
    rates = np.where(grid[None, :] <= limits[fast, None], _phase_rate(grid, lam, mu2[fast], x[fast]), 0.0)
    work = limits[fast] * rates.max(axis=1) / (8.0 * math.pi)
    key = np.floor(np.log2(work + 1.0) / 2.0)
    for g in np.unique(key):
        idx = fast[key == g]
        out[idx] = _integrate_group(lam, mu2[idx], x[idx], lin_var[idx], float(limits[idx].max()), tol)
    return out


def _phase_rate(t, lam, mu2, x):
    """``|theta'(t)|`` for each spec (rows) at each node (columns)."""
    lt2 = (t[:, None] * lam) ** 2
    den = 1.0 + lt2
    own = (lam / den).sum(-1)
    shift = (lam * (1.0 - lt2) / den**2) @ mu2.T  # (G, S)
    return np.abs(own[:, None] + shift - x[None, :]).T


def _tail_limits(lam, mu2, tol):
    """Per-spec truncation point with an integrand tail of at most ``tol``.

    Beyond ``U`` the envelope is bounded by ``exp(-E(U)) / (t^(n+1) prod |lam|)``
    with ``E(t) = sum lam^2 t^2 |mu|^2 / (1 + lam^2 t^2)`` nondecreasing, so the
    tail is at most ``exp(-E(U)) / (n U^n prod |lam|)``.
    """
    alam = np.abs(lam)
    n = alam.size
    u0 = _truncation(lam, tol)
    grid = np.geomspace(min(1e-2 / alam.max(), u0), u0, 128)
    lt2 = (grid[:, None] * alam[None, :]) ** 2
    energy = mu2 @ (lt2 / (1.0 + lt2)).T  # (S, G)
    log_tail = -energy - math.log(n) - n * np.log(grid)[None, :] - np.log(alam).sum()
    ok = log_tail <= math.log(tol * math.pi)
    first = np.argmax(ok, axis=1)  # last grid point always qualifies
    return grid[first]


_GL_LO = np.polynomial.legendre.leggauss(16)
_GL_HI = np.polynomial.legendre.leggauss(24)


def _fixed_rule(f, edges, rule):
    nodes, weights = rule
    a, b = edges[:-1, None], edges[1:, None]
    t = (0.5 * (b - a) * nodes[None, :] + 0.5 * (a + b)).ravel()
    w = (0.5 * (b - a) * weights[None, :]).ravel()
    total = 0.0
    for sl in np.array_split(np.arange(t.size), max(1, t.size // 2048)):
        total = total + f(t[sl]) @ w[sl]
    return total


def _integrate_group(lam, mu2, x, lin_var, upper, tol):
    """Imhof integral for specs sharing ``lam``, on a common panel grid.

    Panels are log-spaced in ``t`` and split to span about eight periods
    of the sampled phase speed; a 24-point Gauss-Legendre rule per
    panel is checked against a 16-point rule and adaptive quadrature takes over
    when they disagree.
    """
    base = _panels(float(np.abs(lam).max()), upper)
    pieces = [base[:1]]
    for a, b in zip(base[:-1], base[1:]):
        # sampled phase speed with a safety factor; the two-rule check guards the rest
        rate = 1.5 * float(_phase_rate(np.linspace(a, b, 6), lam, mu2, x).max()) + 1.0 / (b - a)
        n = int(min(max(1, math.ceil((b - a) * rate / (16.0 * math.pi))), 4000))
        pieces.append(np.linspace(a, b, n + 1)[1:])
    edges = np.concatenate(pieces)

    mu2_t = mu2.T

    def f(t):
        # (S, G) integrand values for a 1-D node vector; the |mu|^2 terms are matrix products
        lt = t[:, None] * lam
        den = 1.0 + lt * lt
        tt = t[:, None]
        theta = np.arctan(lt).sum(-1)[:, None] + (lt / den) @ mu2_t - tt * x
        log_rho = 0.5 * np.log(den).sum(-1)[:, None] + (lt * lt / den) @ mu2_t + 0.5 * lin_var * tt * tt
        return (np.sin(theta) * np.exp(-log_rho) / tt).T

    with np.errstate(all="ignore"):
        hi = _fixed_rule(f, edges, _GL_HI)
        lo = _fixed_rule(f, edges, _GL_LO)
    if np.all(np.isfinite(hi)) and np.max(np.abs(hi - lo)) <= tol * math.pi / 4:
        return np.clip(0.5 - hi / math.pi, 0.0, 1.0)
    lim0 = _imhof_limit0(lam, mu2, x)

    def g(t):
        if t == 0.0:
            return lim0
        return _imhof_terms(t, lam, mu2, x, lin_var)

    total = np.zeros(x.shape[0])
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad_vec(g, a, b, epsabs=tol * math.pi / (4 * len(edges)), epsrel=0.0, norm="max", limit=400)
        total += val
    if not np.all(np.isfinite(total)):
        raise IntegrationNotConverged("non-finite Imhof integral")
    return np.clip(0.5 - total / math.pi, 0.0, 1.0)


# ---------------------------------------------------------------------------
# pairwise error probability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairwiseCase:
    """Precomputed quantities of the pairwise test ``X -> X'``.

    Everything that varies with the estimate is linear or quadratic in
    ``h_hat = vec(H_hat)``:

    * whitened noncentral shifts ``beta = B_beta h_hat``
    * constant term ``c0 = h_hat^H Q0 h_hat + kappa``

    so ``Delta = sum lam |v + beta / lam|^2 + N(0, 2 sum_{lam=0} |beta|^2)
    + c0 - sum beta^2 / lam`` and ``P(X -> X' | H_hat) = P(Q < -c1)``.
    """

    lam: np.ndarray
    zero: np.ndarray
    B_beta: np.ndarray = field(repr=False)
    Q0: np.ndarray = field(repr=False)
    kappa: float
    noise_model: str
    D: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    Psi_y: np.ndarray = field(repr=False)
    M_a: np.ndarray = field(repr=False)

    def spec_terms(self, h_hat: np.ndarray):
        """Shifts, thresholds and linear std for a stack of estimates ``(S, d)``."""
        h = np.atleast_2d(h_hat)
        beta = h @ self.B_beta.T
        c0 = np.einsum("si,ij,sj->s", h.conj(), self.Q0, h).real + self.kappa
        nz = ~self.zero
        lam = self.lam[nz]
        b_nz = beta[:, nz]
        mu = b_nz / lam
        c1 = c0 - np.sum(np.abs(b_nz) ** 2 / lam, axis=1)
        lin_std = np.sqrt(2.0 * np.sum(np.abs(beta[:, self.zero]) ** 2, axis=1))
        return lam, mu, -c1, lin_std


def _block_matrix(X: np.ndarray, n_rx: int) -> np.ndarray:
    return np.kron(X.T, np.eye(n_rx))


def pairwise_case(X: np.ndarray, X2: np.ndarray, model: ConditionalModel, cfg: SystemConfig, noise_model: str = "exact") -> PairwiseCase:
    """Build the quadratic-form description of ``X -> X'`` under ``model``."""
    X, X2 = np.asarray(X, dtype=complex), np.asarray(X2, dtype=complex)
    if np.allclose(X, X2):
        raise ValueError("pairwise error needs two distinct blocks")
    n_r = cfg.n_rx
    Bx, Bx2 = _block_matrix(X, n_r), _block_matrix(X2, n_r)
    A = model.A
    psi = model.psi_cond
    n = Bx.shape[0]
    C = cfg.noise_var * np.eye(n) + Bx @ psi @ Bx.conj().T
    C2 = cfg.noise_var * np.eye(n) + Bx2 @ psi @ Bx2.conj().T
    Ci, C2i = np.linalg.inv(C), np.linalg.inv(C2)
    Ci, C2i = hermitize(Ci), hermitize(C2i)
    D = hermitize(C2i - Ci)
    F = C2i @ Bx2 @ A - Ci @ Bx @ A  # epsilon = F h_hat
    Kq = (Bx2 @ A).conj().T @ C2i @ (Bx2 @ A) - (Bx @ A).conj().T @ Ci @ (Bx @ A)
    kappa = float(np.linalg.slogdet(C2)[1] - np.linalg.slogdet(C)[1])
    if noise_model == "exact":
        M_a, psi_y = Bx @ A, C
    elif noise_model == "independent":
        M_a = Bx
        psi_y = cfg.noise_var * np.eye(n) + Bx @ model.psi_e @ Bx.conj().T
    else:
        raise ValueError(f"unknown noise model {noise_model!r}")
    S = cholesky(psi_y)
    K = hermitize(S.conj().T @ D @ S)
    lam, U = np.linalg.eigh(K)
    # scale of the whitened inverse covariances; D can cancel to rounding level
    scale = max(np.abs(lam).max(), np.linalg.norm(S.conj().T @ Ci @ S, 2))
    zero = np.abs(lam) <= ZERO_EIG * scale
    B_beta = U.conj().T @ S.conj().T @ (D @ M_a - F)
    Q0 = hermitize(M_a.conj().T @ D @ M_a - (M_a.conj().T @ F + F.conj().T @ M_a) + Kq)
    return PairwiseCase(lam, zero, B_beta, Q0, kappa, noise_model, D, F, psi_y, M_a)


def pep_conditional(X, X2, H_hat, model: ConditionalModel, cfg: SystemConfig, noise_model: str = "exact", tol: float = CDF_TOL) -> float:
    """``P(metric(X') < metric(X) | H_hat)`` for the CEEA-ML metric."""
    case = pairwise_case(X, X2, model, cfg, noise_model)
    lam, mu, thr, lin = case.spec_terms(vec(np.asarray(H_hat))[None, :])
    return quadratic_form_cdf(QuadFormSpec(lam, mu[0], float(thr[0]), float(lin[0])), tol)


def _draw_estimates(model: ConditionalModel, n: int, rng) -> np.ndarray:
    gen = as_generator(rng)
    R = cholesky(model.sigma22)
    w = (gen.standard_normal((n, model.dim)) + 1j * gen.standard_normal((n, model.dim))) / math.sqrt(2)
    return w @ R.T


def pep_average(X, X2, model: ConditionalModel, cfg: SystemConfig, n_mc: int = 2000, rng=None, noise_model: str = "exact", h_draws: Optional[np.ndarray] = None):
    """Monte Carlo average of the conditional PEP over ``H_hat ~ CN(0, Sigma22)``.

    Returns
    -------
    mean, stderr : float
    """
    if h_draws is None:
        if n_mc < 100:
            raise ValueError("n_mc must be at least 100")
        h_draws = _draw_estimates(model, n_mc, rng)
    case = pairwise_case(X, X2, model, cfg, noise_model)
    p = _case_probabilities(case, h_draws)
    return float(p.mean()), float(p.std(ddof=1) / math.sqrt(p.size))


def _case_probabilities(case: PairwiseCase, h_draws: np.ndarray) -> np.ndarray:
    lam, mu, thr, lin = case.spec_terms(h_draws)
    return quadratic_form_cdf_batch(lam, mu, thr, lin)


def pep_average_joint(X, X2, model: ConditionalModel, cfg: SystemConfig, noise_model: str = "exact", tol: float = CDF_TOL) -> float:
    """Exact average PEP from the joint Gaussian law of ``(y, h_hat)``.

    ``Delta`` is a central Hermitian form in the white vector ``(z, xi)``
    with ``y = M_a h_hat + S z`` and ``h_hat = R xi``; one CDF evaluation
    replaces the Monte Carlo average.
    """
    case = pairwise_case(X, X2, model, cfg, noise_model)
    S = cholesky(case.Psi_y)
    R = cholesky(model.sigma22)
    n, d = S.shape[0], R.shape[0]
    top = S.conj().T @ case.D @ S
    cross = S.conj().T @ (case.D @ case.M_a - case.F) @ R
    bottom = R.conj().T @ case.Q0 @ R
    M = np.block([[top, cross], [cross.conj().T, bottom]])
    lam = np.linalg.eigvalsh(hermitize(M))
    lam = lam[np.abs(lam) > ZERO_EIG * max(np.abs(lam).max(), np.linalg.norm(bottom, 2), 1.0)]
    return quadratic_form_cdf(QuadFormSpec(lam, np.zeros(lam.size), -case.kappa), tol)


# ---------------------------------------------------------------------------
# union bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnionBound:
    """Union bound on ``BER(k)``; ``raw`` is the unclipped sum."""

    k: Optional[int]
    value: float
    raw: float
    stderr: float


def block_indices(estimator: str, N: int) -> list:
    """Data-block indices averaged for the frame BER."""
    if estimator.upper() == "MB":
        return [k for k in range(1, 2 * N) if k != N]
    if estimator.upper() == "DD":
        return list(range(1, N))
    raise ValueError(f"unknown estimator {estimator!r}")


def _phase_symmetries(points: np.ndarray) -> np.ndarray:
    """Unit scalars ``u`` with ``u * points`` a permutation of ``points``."""
    pts = np.asarray(points, dtype=complex)
    cand = [1.0 + 0j]
    for p in pts:
        for q in pts:
            if abs(q) > 0 and abs(abs(p) - abs(q)) < 1e-9:
                cand.append(p / q)
    out = []
    for u in cand:
        u = u / abs(u)
        if any(abs(u - v) < 1e-9 for v in out):
            continue
        if all(np.min(np.abs(pts - u * p)) < 1e-9 for p in pts):
            out.append(u)
    return np.array(out)


class _PairCanonicalizer:
    """Maps ordered candidate pairs to orbit representatives.

    Right-multiplying both blocks by ``diag(u_1, ..., u_B)`` with each
    ``u_j`` a phase symmetry of the alphabet is a unitary similarity of the
    observation model, so the conditional PEP is unchanged for every
    ``H_hat``.  Pairs are keyed by the rotated pair in which the first
    nonzero entry of every column of ``X`` is canonical.
    """

    def __init__(self, X: np.ndarray, points: np.ndarray):
        self.X = X
        self.rots = _phase_symmetries(points)
        self.index = {self._bytes(x): n for n, x in enumerate(X)}
        self._rot_of = {}

    @staticmethod
    def _bytes(x):
        return (np.round(x, 9) + 0.0).tobytes()  # + 0.0 folds -0.0 into 0.0

    def _rotation(self, i: int) -> np.ndarray:
        d = self._rot_of.get(i)
        if d is None:
            x = self.X[i]
            d = np.ones(x.shape[1], dtype=complex)
            for col in range(x.shape[1]):
                nz = np.flatnonzero(np.abs(x[:, col]) > 1e-12)
                if nz.size == 0:
                    continue
                orbit = self.rots * x[nz[0], col]
                best = min(range(len(orbit)), key=lambda r: (round(orbit[r].real, 9), round(orbit[r].imag, 9)))
                d[col] = self.rots[best]
            self._rot_of[i] = d
        return d

    def key(self, i: int, j: int) -> tuple:
        d = self._rotation(i)
        if np.all(d == 1):
            return (i, j)
        a = self.index.get(self._bytes(self.X[i] * d))
        b = self.index.get(self._bytes(self.X[j] * d))
        if a is None or b is None:
            return (i, j)
        return (a, b)

    def representative(self, key: tuple):
        return self.X[key[0]], self.X[key[1]]


def ber_union_bound(
    k: Optional[int],
    cfg: SystemConfig,
    phi: np.ndarray,
    temporal,
    n_mc: int = 2000,
    rng=None,
    estimator: str = "MB",
    noise_model: str = "exact",
    method: str = "mc",
    k_p: int = 0,
) -> UnionBound:
    """Union bound ``sum d_H(X, X') P(X -> X') / (2^{mB} mB)`` for CEEA-ML.

    ``method="mc"`` averages the conditional PEP over ``n_mc`` draws of the
    estimate (shared by all pairs); ``method="joint"`` uses the exact
    joint-Gaussian average.  Pairs related by a per-slot phase symmetry of
    the alphabet share one evaluation.  The sum runs over ordered pairs in
    lexicographic order and is clipped at 1.
    """
    cands = enumerate_candidates(cfg)
    if len(cands) > PAIR_CANDIDATE_CAP:
        raise SearchSpaceTooLarge(f"{len(cands)} candidates exceed the pairwise cap of {PAIR_CANDIDATE_CAP}")
    if estimator.upper() == "MB":
        model = mb_statistics(k, cfg, phi, temporal, k_p)
    else:
        model = dd_statistics(cfg, phi, temporal)
    n_bits = cfg.bits_per_block
    norm = 2.0**n_bits * n_bits
    if len(cands) < 2:
        return UnionBound(k, 0.0, 0.0, 0.0)
    bits = cands.bits
    X = cands.X
    h_draws = _draw_estimates(model, n_mc, rng) if method == "mc" else None
    canon = _PairCanonicalizer(X, cands.const.points)
    memo: Dict[tuple, object] = {}
    total = 0.0
    per_draw = None
    for i in range(len(cands)):
        for j in range(len(cands)):
            if i == j:
                continue
            dh = int(np.count_nonzero(bits[i] != bits[j]))
            key = canon.key(i, j)
            if key not in memo:
                a, b = canon.representative(key)
                if method == "mc":
                    memo[key] = _case_probabilities(pairwise_case(a, b, model, cfg, noise_model), h_draws)
                else:
                    memo[key] = pep_average_joint(a, b, model, cfg, noise_model)
            if method == "mc":
                contrib = dh * memo[key] / norm
                per_draw = contrib if per_draw is None else per_draw + contrib
            else:
                total += dh * memo[key] / norm
    if method == "mc":
        raw = float(per_draw.mean())
        se = float(per_draw.std(ddof=1) / math.sqrt(per_draw.size))
    else:
        raw, se = total, 0.0
    return UnionBound(k, min(raw, 1.0), raw, se)


def ber_average(per_k: Mapping[int, float], estimator: str, N: int) -> float:
    """Frame-average BER over the estimator's data-block index set."""
    idx = block_indices(estimator, N)
    missing = [k for k in idx if k not in per_k]
    if missing:
        raise MissingBlockIndex(f"missing block indices {missing}")
    return float(np.mean([float(getattr(per_k[k], "value", per_k[k])) for k in idx]))
