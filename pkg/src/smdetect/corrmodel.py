"""Space-time correlation models and correlated block-fading channel synthesis.

Channel matrices are ``N_R x N_T`` and are vectorised column-major, so the
entry ``H[i, j]`` sits at position ``j * N_R + i`` of ``vec(H)``.  With that
convention a Kronecker spatial model is ``Phi = kron(Phi_T, Phi_R)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

from .errors import ExplicitNotPSD, NotHermitian, TemporalGramNotPSD

__all__ = [
    "SystemConfig",
    "SpatialModel",
    "TemporalModel",
    "ChannelRealization",
    "temporal_correlation",
    "coherence_lag",
    "spatial_correlation",
    "partial_correlations",
    "psd_sqrt",
    "generate_channels",
    "awgn",
    "vec",
    "unvec",
    "as_generator",
]

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
EIG_CLAMP = 1e-12
CHOL_JITTER = 1e-10


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SystemConfig:
    """Static link parameters.

    Parameters
    ----------
    n_tx, n_rx : int
        Transmit / receive antenna counts.
    block_len : int
        Symbols per block (``B``).  SM pilot blocks need ``block_len == n_tx``.
    frame_len : int
        Blocks per frame (``N``); one pilot block plus ``N - 1`` data blocks.
    mod_order : int
        Constellation size ``M`` (power of two).
    mod_kind : {"PSK", "QAM"}
    doppler : float
        Normalised Doppler ``f_D * T_s``.
    symbol_power, pilot_power : float
        Average data symbol energy and pilot energy.
    noise_var : float
        Complex noise variance per receive sample.
    signal : {"SM", "SMX", "SSK"}
        Candidate-set family used for mapping and detection.
    """

    n_tx: int
    n_rx: int
    block_len: int
    frame_len: int
    mod_order: int
    mod_kind: str = "PSK"
    doppler: float = 0.01
    symbol_power: float = 1.0
    pilot_power: float = 1.0
    noise_var: float = 0.1
    signal: str = "SM"

    def __post_init__(self):
        object.__setattr__(self, "mod_kind", str(self.mod_kind).upper())
        object.__setattr__(self, "signal", str(self.signal).upper())
        for name in ("n_tx", "n_rx", "block_len", "mod_order"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.frame_len < 2:
            raise ValueError("frame_len must be at least 2")
        if self.mod_kind not in ("PSK", "QAM"):
            raise ValueError(f"unknown mod_kind {self.mod_kind!r}")
        if self.signal not in ("SM", "SMX", "SSK"):
            raise ValueError(f"unknown signal family {self.signal!r}")
        if not _is_pow2(self.mod_order) or not _is_pow2(self.n_tx):
            raise ValueError("mod_order and n_tx must be powers of two")
        if self.symbol_power <= 0 or self.pilot_power <= 0:
            raise ValueError("symbol_power and pilot_power must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        if self.doppler < 0:
            raise ValueError("doppler must be nonnegative")

    @property
    def bits_per_slot(self) -> int:
        """Information bits carried by one symbol interval (one column of X)."""
        if self.signal == "SM":
            return int(round(math.log2(self.mod_order * self.n_tx)))
        if self.signal == "SSK":
            return int(round(math.log2(self.n_tx)))
        return int(round(self.n_tx * math.log2(self.mod_order)))

    @property
    def bits_per_block(self) -> int:
        return self.bits_per_slot * self.block_len

    @property
    def bits_per_symbol(self) -> int:
        """Bits per transmission used for the E_b normalisation."""
        return self.bits_per_slot

    def with_noise_var(self, noise_var: float) -> "SystemConfig":
        return replace(self, noise_var=float(noise_var))

    def with_ebn0_db(self, ebn0_db: float) -> "SystemConfig":
        return self.with_noise_var(self.noise_var_for_ebn0(ebn0_db))

    def noise_var_for_ebn0(self, ebn0_db: float) -> float:
        """Noise variance giving the requested average received E_b/N_0.

        ``E_b = symbol_power / m`` per receive antenna, with ``m`` the bits per
        transmission, so ``noise_var = symbol_power / (m * 10**(dB/10))``.
        """
        return self.symbol_power / (self.bits_per_symbol * 10.0 ** (ebn0_db / 10.0))


@dataclass(frozen=True)
class SpatialModel:
    """Spatial correlation model.

    Use the constructors :meth:`bessel`, :meth:`exponential`,
    :meth:`explicit` and :meth:`identity`.
    """

    kind: str
    spacing: float = 0.5
    r: float = 0.0
    t: float = 0.0
    phi: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    phi_t: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    phi_r: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    kronecker: bool = True

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind == "exponential":
            if not (0.0 <= self.r < 1.0 and 0.0 <= self.t < 1.0):
                raise ValueError("exponential model needs 0 <= r, t < 1")
        elif kind == "bessel":
            if self.spacing < 0:
                raise ValueError("antenna spacing must be nonnegative")
        elif kind == "explicit":
            if self.phi is None and (self.phi_t is None or self.phi_r is None):
                raise ValueError("explicit model needs phi or both phi_t and phi_r")
        else:
            raise ValueError(f"unknown spatial model kind {self.kind!r}")

    @classmethod
    def bessel(cls, spacing: float = 0.5) -> "SpatialModel":
        """Isotropic scattering with ULAs; ``spacing`` is delta / lambda at both ends."""
        return cls("bessel", spacing=float(spacing))

    @classmethod
    def exponential(cls, r: float, t: float) -> "SpatialModel":
        return cls("exponential", r=float(r), t=float(t))

    @classmethod
    def identity(cls) -> "SpatialModel":
        return cls("exponential", r=0.0, t=0.0)

    @classmethod
    def explicit(cls, phi=None, phi_t=None, phi_r=None) -> "SpatialModel":
        if phi is not None:
            return cls("explicit", phi=np.asarray(phi, dtype=complex), kronecker=False)
        return cls(
            "explicit",
            phi_t=np.asarray(phi_t, dtype=complex),
            phi_r=np.asarray(phi_r, dtype=complex),
            kronecker=True,
        )


@dataclass(frozen=True)
class TemporalModel:
    """Temporal (block-to-block) correlation.

    ``kind`` is ``"jakes"`` or ``"static"``.  For Jakes the normalised Doppler
    ``f_D * T_s`` is taken from ``doppler`` when given, else from the
    :class:`SystemConfig`.
    """

    kind: str = "jakes"
    doppler: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in ("jakes", "static"):
            raise ValueError(f"unknown temporal model kind {self.kind!r}")
        if self.doppler is not None and self.doppler < 0:
            raise ValueError("doppler must be nonnegative")

    @classmethod
    def jakes(cls, doppler: Optional[float] = None) -> "TemporalModel":
        return cls("jakes", doppler)

    @classmethod
    def static(cls) -> "TemporalModel":
        return cls("static")

    def doppler_for(self, cfg: SystemConfig) -> float:
        return cfg.doppler if self.doppler is None else self.doppler


@dataclass(frozen=True)
class ChannelRealization:
    """Channel matrices ``H(0), ..., H(K)`` of one window."""

    blocks: np.ndarray = field(repr=False)
    spatial: SpatialModel
    temporal: TemporalModel
    seed: Optional[object] = None

    def __len__(self):
        return self.blocks.shape[0]

    def __getitem__(self, k):
        return self.blocks[k]


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stacking vectorisation (last two axes)."""
    m = np.asarray(m)
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (-1,))


def unvec(v: np.ndarray, n_rows: int) -> np.ndarray:
    v = np.asarray(v)
    n_cols = v.shape[-1] // n_rows
    return np.swapaxes(v.reshape(v.shape[:-1] + (n_cols, n_rows)), -1, -2)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# temporal correlation
# ---------------------------------------------------------------------------


def temporal_correlation(lag, model: TemporalModel, cfg: SystemConfig):
    """Block-lag autocorrelation ``rho_T(lag)``.

    Jakes: ``J0(2 pi f_D T_s B lag)``; static: 1.  Accepts scalars or arrays
    of integer (or real) lags.
    """
    lag = np.asarray(lag, dtype=float)
    if model.kind == "static":
        out = np.ones_like(lag)
    else:
        x = 2.0 * np.pi * model.doppler_for(cfg) * cfg.block_len * np.abs(lag)
        out = special.j0(x)
    return float(out) if out.ndim == 0 else out


def coherence_lag(model: TemporalModel, cfg: SystemConfig, level: float = 0.5) -> float:
    """Smallest lag (in blocks) where ``rho_T`` drops to ``level``.

    With ``block_len = 1`` the result is in symbol durations.
    """
    if model.kind == "static" or model.doppler_for(cfg) == 0:
        return math.inf
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    scale = 2.0 * np.pi * model.doppler_for(cfg) * cfg.block_len
    first_zero = special.jn_zeros(0, 1)[0]
    x = optimize.brentq(lambda z: special.j0(z) - level, 0.0, first_zero, xtol=1e-14)
    return x / scale


# ---------------------------------------------------------------------------
# spatial correlation
# ---------------------------------------------------------------------------


def _check_hermitian(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotHermitian(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
        raise NotHermitian(f"{name} is not Hermitian")
    return m


def _check_correlation(m: np.ndarray, name: str) -> np.ndarray:
    m = _check_hermitian(np.asarray(m, dtype=complex), name)
    if np.min(np.linalg.eigvalsh(m)) < -PSD_TOL:
        raise ExplicitNotPSD(f"{name} is not positive semidefinite")
    if not np.allclose(np.diag(m).real, 1.0, atol=1e-10):
        raise ExplicitNotPSD(f"{name} must have a unit diagonal")
    return m


def _toeplitz_from(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return values[idx]


def partial_correlations(phi: np.ndarray, n_tx: int, n_rx: int):
    """Transmit and receive correlation matrices implied by a full ``Phi``.

    These are the normalised partial traces; for a Kronecker ``Phi`` with
    unit-diagonal factors they return the factors exactly.
    """
    p = np.asarray(phi).reshape(n_tx, n_rx, n_tx, n_rx)
    phi_t = np.einsum("jini->jn", p) / n_rx
    phi_r = np.einsum("jijm->im", p) / n_tx
    return phi_t, phi_r


def spatial_correlation(model: SpatialModel, cfg: SystemConfig):
    """Return ``(Phi_T, Phi_R, Phi)`` for ``model``.

    ``Phi = kron(Phi_T, Phi_R)`` whenever the model is separable.  Bessel
    entries are ``J0(2 pi |i - j| delta / lambda)`` and exponential entries
    ``t**|i-j|`` (transmit) and ``r**|i-j|`` (receive).
    """
    nt, nr = cfg.n_tx, cfg.n_rx
    if model.kind == "bessel":
        phi_t = _toeplitz_from(special.j0(2 * np.pi * model.spacing * np.arange(nt))).astype(complex)
        phi_r = _toeplitz_from(special.j0(2 * np.pi * model.spacing * np.arange(nr))).astype(complex)
    elif model.kind == "exponential":
        phi_t = _toeplitz_from(model.t ** np.arange(nt, dtype=float)).astype(complex)
        phi_r = _toeplitz_from(model.r ** np.arange(nr, dtype=float)).astype(complex)
    else:
        if model.phi is not None:
            phi = _check_correlation(model.phi, "Phi")
            if phi.shape != (nt * nr, nt * nr):
                raise ValueError("explicit Phi has the wrong size for this configuration")
            phi_t, phi_r = partial_correlations(phi, nt, nr)
            return phi_t, phi_r, phi
        phi_t = _check_correlation(model.phi_t, "Phi_T")
        phi_r = _check_correlation(model.phi_r, "Phi_R")
        if phi_t.shape != (nt, nt) or phi_r.shape != (nr, nr):
            raise ValueError("explicit Phi_T / Phi_R have the wrong size for this configuration")
    return phi_t, phi_r, np.kron(phi_t, phi_r)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Hermitian square root ``S`` of a PSD matrix, so that ``S @ S^H = m``.

    Eigenvalues below ``1e-12`` (relative to the largest) are clamped to zero.
    """
    m = _check_hermitian(np.asarray(m), "matrix")
    herm = 0.5 * (m + m.conj().T)
    w, u = np.linalg.eigh(herm)
    floor = EIG_CLAMP * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    w = np.where(w < floor, 0.0, w)
    return (u * np.sqrt(w)) @ u.conj().T


# ---------------------------------------------------------------------------
# channel synthesis
# ---------------------------------------------------------------------------


def _temporal_factor(n_blocks: int, temporal: TemporalModel, cfg: SystemConfig) -> Optional[np.ndarray]:
    if temporal.kind == "static" or temporal.doppler_for(cfg) == 0:
        return None
    r_t = _toeplitz_from(temporal_correlation(np.arange(n_blocks), temporal, cfg))
    try:
        return np.linalg.cholesky(r_t)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(r_t + CHOL_JITTER * np.eye(n_blocks))
    except np.linalg.LinAlgError as exc:
        raise TemporalGramNotPSD(
            "temporal correlation matrix is not positive semidefinite"
        ) from exc


def generate_channels(
    cfg: SystemConfig,
    spatial: SpatialModel,
    temporal: TemporalModel,
    n_blocks: int,
    rng=None,
) -> ChannelRealization:
    """Draw ``H(0), ..., H(n_blocks - 1)`` with covariance ``R_T kron Phi``.

    A white ``CN(0, 1)`` array is coloured by ``chol(R_T)`` along the block
    axis and by ``Phi^(1/2)`` along the space axis.  A static temporal model
    repeats a single draw.
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be at least 1")
    seed = rng if not isinstance(rng, np.random.Generator) else None
    gen = as_generator(rng)
    _, _, phi = spatial_correlation(spatial, cfg)
    s = psd_sqrt(phi)
    n_sp = cfg.n_tx * cfg.n_rx
    lt = _temporal_factor(n_blocks, temporal, cfg)
    if lt is None:
        w = _cn(gen, (1, n_sp))
        v = np.repeat(w @ s.T, n_blocks, axis=0)
    else:
        w = _cn(gen, (n_blocks, n_sp))
        v = lt @ (w @ s.T)
    blocks = unvec(v, cfg.n_rx)
    return ChannelRealization(np.ascontiguousarray(blocks), spatial, temporal, seed)


def _cn(gen: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    scale = math.sqrt(var / 2.0)
    return scale * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape))


def awgn(shape: Sequence[int], noise_var: float, rng=None) -> np.ndarray:
    """Circularly symmetric complex Gaussian noise with variance ``noise_var``."""
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    gen = as_generator(rng)
    if noise_var == 0:
        return np.zeros(shape, dtype=complex)
    return _cn(gen, shape, noise_var)
