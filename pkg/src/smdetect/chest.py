"""Pilot-assisted channel estimation.

Two trackers are provided.  The model-based estimator (MB) fits a quadratic
polynomial in the block index through three pilot observations taken ``N``
blocks apart.  The decision-directed estimator (DD) refreshes the channel
columns of the antennas that were active in the last detected block.  The
module also holds the MB error covariance and the blind estimators of the
spatial and temporal correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .corrmodel import SystemConfig, TemporalModel, psd_sqrt, temporal_correlation
from .errors import RankDeficientTruncation, SingularT

__all__ = [
    "ChannelEstimate",
    "MBWindow",
    "MBScalars",
    "ErrorCovariance",
    "CorrelationEstimate",
    "pilot_epoch_matrix",
    "mb_weights",
    "mb_scalars",
    "mb_estimate",
    "mb_error_covariance",
    "ls_pilot_estimate",
    "dd_update",
    "estimate_spatial_correlation",
    "estimate_temporal_correlation",
    "rho_function",
]


@dataclass(frozen=True)
class ChannelEstimate:
    """Channel estimate ``H_hat`` used to detect block ``block_idx``.

    ``source`` is ``"MB"``, ``"DD"``, ``"pilot"`` or ``"perfect"``.
    """

    H_hat: np.ndarray = field(repr=False)
    source: str
    block_idx: int


def rho_function(temporal, cfg: SystemConfig) -> Callable:
    """Normalise a temporal model or a callable into ``lag -> rho_T(lag)``."""
    if callable(temporal) and not isinstance(temporal, TemporalModel):
        return temporal
    return lambda lag: temporal_correlation(lag, temporal, cfg)


# ---------------------------------------------------------------------------
# model-based estimator
# ---------------------------------------------------------------------------


def _epochs(k_p: int, N: int) -> np.ndarray:
    return np.array([k_p, k_p + N, k_p + 2 * N], dtype=float)


def pilot_epoch_matrix(k_p: int, N: int) -> np.ndarray:
    """``T(k_p)`` with rows ``[k^2, k, 1]`` at the three pilot epochs."""
    e = _epochs(k_p, N)
    return np.stack([e**2, e, np.ones(3)], axis=1)


def mb_weights(k, k_p: int, N: int) -> np.ndarray:
    """Interpolation weights ``w(k) = t(k)^T T(k_p)^{-1}``.

    Computed in Lagrange form, which is algebraically identical to the
    matrix expression but stays well conditioned for large epochs.
    Accepts a scalar or an array of block indices (result ``(..., 3)``).
    """
    if N == 0:
        raise SingularT("pilot epochs coincide (N = 0)")
    k = np.asarray(k, dtype=float)
    if np.any(k < k_p) or np.any(k > k_p + 2 * N):
        raise ValueError("block index outside the pilot window")
    x = (k - k_p) / N
    w = np.stack([(x - 1) * (x - 2) / 2.0, -x * (x - 2), x * (x - 1) / 2.0], axis=-1)
    return w


@dataclass(frozen=True)
class MBScalars:
    """Scalar statistics of the MB estimate at block ``k``.

    ``c = w.q`` is the estimate/channel cross-correlation factor, ``nu`` the
    estimate autocorrelation factor and ``w_norm2 = ||w||^2``.
    """

    k: int
    w: np.ndarray
    q: np.ndarray
    nu: float
    c: float
    w_norm2: float

    @property
    def error_factor(self) -> float:
        """``nu - 2 w.q + 1``, the channel-variation part of the error covariance."""
        return self.nu - 2.0 * self.c + 1.0


def mb_scalars(k: int, k_p: int, N: int, rho: Callable) -> MBScalars:
    """``w(k)``, ``q(k)``, ``nu(k)`` for a pilot window starting at ``k_p``."""
    w = mb_weights(k, k_p, N)
    r_n, r_2n = float(rho(N)), float(rho(2 * N))
    r3 = np.array([[1.0, r_n, r_2n], [r_n, 1.0, r_n], [r_2n, r_n, 1.0]])
    lags = k - _epochs(k_p, N)
    q = np.array([float(rho(lag)) for lag in lags])
    nu = float(w @ r3 @ w)
    return MBScalars(int(k), w, q, nu, float(w @ q), float(w @ w))


@dataclass(frozen=True)
class MBWindow:
    """Pilot observations ``Y(k_p), Y(k_p + N), Y(k_p + 2N)`` of one MB window."""

    k_p: int
    N: int
    pilot_obs: np.ndarray = field(repr=False)
    pilot_power: float = 1.0

    @property
    def y_tilde(self) -> np.ndarray:
        """LS pilot estimates ``Y / sqrt(eps_p)``, shape ``(3, N_R, N_T)``."""
        return np.asarray(self.pilot_obs) / math.sqrt(self.pilot_power)

    @property
    def coeffs(self) -> np.ndarray:
        """Per-entry polynomial coefficients ``[alpha, beta, gamma]``, shape ``(3, N_R, N_T)``."""
        t = pilot_epoch_matrix(self.k_p, self.N)
        y = self.y_tilde
        return np.linalg.solve(t, y.reshape(3, -1)).reshape(y.shape)


def mb_estimate(window: MBWindow, k: int) -> ChannelEstimate:
    """``H_hat_ij(k) = w(k) . y_tilde_ij``."""
    w = mb_weights(k, window.k_p, window.N)
    h = np.tensordot(w, window.y_tilde, axes=(0, 0))
    return ChannelEstimate(h, "MB", int(k))


@dataclass(frozen=True)
class ErrorCovariance:
    psi_e: np.ndarray = field(repr=False)
    block_idx: int


def mb_error_covariance(
    k: int,
    cfg: SystemConfig,
    phi: np.ndarray,
    temporal,
    k_p: int = 0,
) -> ErrorCovariance:
    """Covariance of ``vec(H_hat(k) - H(k))`` for the MB estimator.

    ``(nu - 2 w.q + 1) Phi + (sigma^2 ||w||^2 / eps_p) I``.
    """
    s = mb_scalars(k, k_p, cfg.frame_len, rho_function(temporal, cfg))
    phi = np.asarray(phi)
    psi = s.error_factor * phi + (cfg.noise_var * s.w_norm2 / cfg.pilot_power) * np.eye(phi.shape[0])
    return ErrorCovariance(psi, int(k))


# ---------------------------------------------------------------------------
# decision-directed estimator
# ---------------------------------------------------------------------------


def ls_pilot_estimate(Y: np.ndarray, cfg: SystemConfig, k: int = 0) -> ChannelEstimate:
    """LS estimate from a pilot block ``sqrt(eps_p) I``: ``Y / sqrt(eps_p)``."""
    return ChannelEstimate(np.asarray(Y) / math.sqrt(cfg.pilot_power), "pilot", int(k))


def dd_update(prev: ChannelEstimate, Y: np.ndarray, X_hat: np.ndarray, cfg: SystemConfig) -> ChannelEstimate:
    """Refresh the columns of the antennas active in ``X_hat``.

    The detected block acts as a pseudo-pilot.  With ``Xbar`` the rows of
    ``X_hat`` of the active antennas, those columns become ``Y Xbar^+``;
    all other columns are carried over from ``prev``.
    """
    X_hat = np.asarray(X_hat)
    active = np.flatnonzero(np.any(np.abs(X_hat) > 0, axis=1))
    xbar = X_hat[active]
    if active.size == 0 or np.linalg.matrix_rank(xbar) < active.size:
        raise RankDeficientTruncation("detected block does not identify its active antennas")
    h = np.array(prev.H_hat, dtype=complex, copy=True)
    h[:, active] = np.asarray(Y) @ np.linalg.pinv(xbar)
    return ChannelEstimate(h, "DD", prev.block_idx + 1)


# ---------------------------------------------------------------------------
# correlation estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationEstimate:
    """Blind spatial-correlation estimate.

    ``phi_r_bar`` and ``phi_t_bar`` are the raw time averages; ``phi_r`` and
    ``phi_t`` are the refined exponential-profile matrices.
    """

    r_hat: float
    t_hat: float
    phi_r: np.ndarray = field(repr=False)
    phi_t: np.ndarray = field(repr=False)
    phi_r_bar: np.ndarray = field(repr=False)
    phi_t_bar: np.ndarray = field(repr=False)
    projected: bool = False

    @property
    def phi(self) -> np.ndarray:
        return np.kron(self.phi_t, self.phi_r)


GRID_POINTS = 64
SEARCH_HI = 1.0 - 1e-6
SEARCH_TOL = 1e-6


def _fit_decay(phi_bar: np.ndarray) -> float:
    n = phi_bar.shape[0]
    if n == 1:
        return 0.0
    dist = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    target = np.abs(phi_bar)

    def objective(rho):
        return float(np.sum((rho**dist - target) ** 2))

    grid = np.linspace(0.0, SEARCH_HI, GRID_POINTS)
    values = [objective(g) for g in grid]
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]
    res = optimize.minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": SEARCH_TOL})
    return float(res.x) if res.fun <= values[i] else float(grid[i])


def _refine(rho: float, phi_bar: np.ndarray) -> np.ndarray:
    n = phi_bar.shape[0]
    dist = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    sign = np.where(phi_bar.real < 0, -1.0, 1.0)
    out = rho**dist * sign
    np.fill_diagonal(out, 1.0)
    return out.astype(complex)


def _nearest_correlation(m: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(m)
    w = np.maximum(w, 1e-9)
    out = (u * w) @ u.conj().T
    d = np.sqrt(np.diag(out).real)
    return out / np.outer(d, d)


def estimate_spatial_correlation(pilot_estimates: Sequence, cfg: SystemConfig) -> CorrelationEstimate:
    """Fit exponential receive and transmit profiles to pilot-epoch estimates.

    ``Phi_R_bar = sum H H^H / (3 N_T)`` and ``Phi_T_bar = sum H^T H^* / (3 N_R)``
    over the pilot estimates.  ``r_hat`` minimises
    ``sum_ij (r^|i-j| - |Phi_R_bar_ij|)^2`` on ``[0, 1)``: a 64-point grid
    brackets the minimum and a bounded scalar search refines it.  The refined
    matrix is ``r_hat^|i-j| sgn(Re Phi_R_bar_ij)``; if the sign pattern makes
    it indefinite it is projected onto the nearest correlation matrix and
    ``projected`` is set.
    """
    hs = [np.asarray(getattr(h, "H_hat", h)) for h in pilot_estimates]
    n = len(hs)
    phi_r_bar = sum(h @ h.conj().T for h in hs) / (n * cfg.n_tx)
    phi_t_bar = sum(h.T @ h.conj() for h in hs) / (n * cfg.n_rx)
    r_hat = _fit_decay(phi_r_bar)
    t_hat = _fit_decay(phi_t_bar)
    phi_r = _refine(r_hat, phi_r_bar)
    phi_t = _refine(t_hat, phi_t_bar)
    projected = False
    for name in ("phi_r", "phi_t"):
        m = locals()[name]
        if np.linalg.eigvalsh(m).min() < 1e-9:
            projected = True
            if name == "phi_r":
                phi_r = _nearest_correlation(m)
            else:
                phi_t = _nearest_correlation(m)
    return CorrelationEstimate(r_hat, t_hat, phi_r, phi_t, phi_r_bar, phi_t_bar, projected)


def estimate_temporal_correlation(pilot_estimates: Sequence, cfg: SystemConfig, noise_var: Optional[float] = None) -> TemporalModel:
    """Jakes model fitted to the lag-``N`` sample correlation of pilot estimates.

    The sample correlation between consecutive pilot epochs is corrected for
    the pilot noise power and inverted through ``J0`` to a Doppler value.
    """
    hs = [np.asarray(getattr(h, "H_hat", h)) for h in pilot_estimates]
    if len(hs) < 2:
        raise ValueError("need at least two pilot estimates")
    nv = cfg.noise_var if noise_var is None else noise_var
    size = hs[0].size
    cross = np.mean([np.vdot(a, b).real for a, b in zip(hs[:-1], hs[1:])])
    power = np.mean([np.vdot(h, h).real for h in hs]) - size * nv / cfg.pilot_power
    rho = float(np.clip(cross / max(power, 1e-300), -1.0, 1.0))
    first_zero = special.jn_zeros(0, 1)[0]
    if rho >= 1.0:
        return TemporalModel.jakes(0.0)
    if rho <= 0.0:
        x = first_zero
    else:
        x = optimize.brentq(lambda z: special.j0(z) - rho, 0.0, first_zero, xtol=1e-14)
    return TemporalModel.jakes(x / (2 * np.pi * cfg.block_len * cfg.frame_len))
