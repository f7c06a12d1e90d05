"""Detection rules for SM blocks under estimated channel knowledge.

Every estimation-error-aware detector is a Gaussian likelihood test:
given the estimate ``H_hat`` the received ``vec(Y)`` is ``CN(m, C)`` with

    m = (X^T kron I) A vec(H_hat)
    C = sigma^2 I + (X^T kron I) Psi (X^* kron I)

where ``A = c Phi Sigma22^{-1}`` and ``Psi = Phi - c A Phi``.  The MB and DD
estimators differ only in the scalars ``c`` and ``Sigma22`` (see
:func:`mb_statistics` and :func:`dd_statistics`); the ZRC and ZTC variants use
the same algebra on a one-sided correlation matrix.

For SM blocks ``X = L diag(s)`` the metric is evaluated with the symbols
divided out of the observation.  Writing ``u_j = 1 / s_j`` the residual
becomes ``sum_j u_j G_j - g`` where ``G_j`` and ``g`` depend on the antenna
pattern (and, for QAM, the magnitude profile of ``s``) but not on the
symbol phases.  The covariance of the rescaled residual is
``sigma^2 (E^{-1} kron I) + Psi[L, L]`` with ``E = diag(|s_j|^2)``, and the
Jacobian of the rescaling contributes ``N_R sum_j log |s_j|^2``.  The metric
value is identical to ``log det C + (y - m)^H C^{-1} (y - m)``; only the
bookkeeping changes.  All whitening factors are precomputed once per block
index and reused.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .chest import mb_scalars, rho_function
from .corrmodel import SystemConfig, partial_correlations, vec
from .errors import EmptyCandidateSet, UnsupportedOrder
from .linalg import cholesky, inv_cholesky, quad_form
from .smcodec import CandidateSet, Constellation, SMBlock, constellation_for, enumerate_candidates

__all__ = [
    "DetectorKind",
    "Decision",
    "ConditionalModel",
    "DetectorStatistics",
    "Detector",
    "quad_form",
    "mb_statistics",
    "dd_statistics",
    "reduced_statistics",
    "build_statistics",
    "detect_full_search",
    "detect_two_stage",
    "detect_ztc",
    "detect_per_slot",
    "detect_general",
    "general_metrics",
]


class DetectorKind(enum.Enum):
    PERFECT_CSI = "PerfectCSI"
    MISMATCHED = "Mismatched"
    CEEA_ML_MB = "CeeaMlMb"
    CEEA_ML_DD = "CeeaMlDd"
    TWO_STAGE_MB = "TwoStageMb"
    TWO_STAGE_DD = "TwoStageDd"
    ZRC_MB = "ZrcMb"
    ZTC_MB = "ZtcMb"
    ZRC_DD = "ZrcDd"
    ZTC_DD = "ZtcDd"
    TWO_STAGE_ZRC_MB = "TwoStageZrcMb"
    TWO_STAGE_ZRC_DD = "TwoStageZrcDd"

    @classmethod
    def parse(cls, name) -> "DetectorKind":
        if isinstance(name, cls):
            return name
        for kind in cls:
            if kind.value.lower() == str(name).lower() or kind.name.lower() == str(name).lower():
                return kind
        raise ValueError(f"unknown detector {name!r}")

    @property
    def estimator(self) -> Optional[str]:
        """``"MB"`` or ``"DD"`` for estimator-specific rules, else ``None``."""
        v = self.value
        if v.endswith("Mb"):
            return "MB"
        if v.endswith("Dd"):
            return "DD"
        return None

    @property
    def family(self) -> str:
        return {
            "PerfectCSI": "perfect",
            "Mismatched": "mismatched",
            "CeeaMl": "ceea",
            "TwoStage": "two_stage",
            "Zrc": "zrc",
            "Ztc": "ztc",
            "TwoStageZrc": "two_stage_zrc",
        }[self.value[:-2] if self.estimator else self.value]

    @property
    def side(self) -> str:
        """Which correlation the statistics use: ``full``, ``zrc`` or ``ztc``."""
        fam = self.family
        if fam in ("zrc", "two_stage_zrc"):
            return "zrc"
        if fam == "ztc":
            return "ztc"
        return "full"

    @property
    def two_stage(self) -> bool:
        return self.family in ("two_stage", "two_stage_zrc")

    def for_estimator(self, estimator: str) -> "DetectorKind":
        """The same rule bound to another estimator (identity for estimator-free kinds)."""
        if self.estimator is None:
            return self
        return DetectorKind(self.value[:-2] + estimator.capitalize())


@dataclass(frozen=True)
class Decision:
    """Detected block with the winning metric.

    ``index`` is the position in the lexicographic candidate order.
    ``n_singular`` counts two-stage patterns that needed a pseudo-inverse.
    """

    block: SMBlock
    metric: float
    index: int
    n_singular: int = 0

    @property
    def X(self) -> np.ndarray:
        return self.block.X

    @property
    def antenna_idx(self):
        return self.block.antenna_idx

    @property
    def symbols(self):
        return self.block.symbols


# ---------------------------------------------------------------------------
# conditional Gaussian model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalModel:
    """Joint Gaussian model of the channel vector and its estimate.

    ``Cov(h) = phi``, ``Cov(h_hat) = sigma22`` and ``Cov(h, h_hat) = c phi``.

    Attributes
    ----------
    c : float
        Cross-correlation factor (``w.q`` for MB, ``rho_T(1)`` for DD).
    phi, sigma22 : ndarray
        Channel and estimate covariances.
    noise_var : float
        Receiver noise variance.
    estimator : str
        ``"MB"`` or ``"DD"``.
    block_idx : int or None
        Block index for MB statistics.
    """

    c: float
    phi: np.ndarray = field(repr=False)
    sigma22: np.ndarray = field(repr=False)
    noise_var: float
    estimator: str = "MB"
    block_idx: Optional[int] = None

    @property
    def dim(self) -> int:
        return self.phi.shape[0]

    @property
    def A(self) -> np.ndarray:
        """Estimator gain ``c Phi Sigma22^{-1}``."""
        s22 = np.asarray(self.sigma22)
        return self.c * np.linalg.solve(s22.T, np.asarray(self.phi).T).T

    @property
    def psi_cond(self) -> np.ndarray:
        """``Cov(h | h_hat) = Phi - c A Phi``."""
        p = self.phi - self.c * self.A @ self.phi
        return 0.5 * (p + p.conj().T)

    @property
    def psi_e(self) -> np.ndarray:
        """Covariance of the estimation error ``h_hat - h``."""
        p = self.sigma22 - 2.0 * self.c * self.phi + self.phi
        return 0.5 * (p + p.conj().T)

    def mean(self, X: np.ndarray, H_hat: np.ndarray) -> np.ndarray:
        """``m = (X^T kron I) A vec(H_hat)`` (full side only)."""
        n_r = self.dim // X.shape[0]
        return np.kron(X.T, np.eye(n_r)) @ (self.A @ vec(H_hat))

    def covariance(self, X: np.ndarray) -> np.ndarray:
        """``C = sigma^2 I + (X^T kron I) Psi (X^* kron I)`` (full side only)."""
        n_r = self.dim // X.shape[0]
        xk = np.kron(X.T, np.eye(n_r))
        return self.noise_var * np.eye(xk.shape[0]) + xk @ self.psi_cond @ xk.conj().T


def mb_statistics(k: int, cfg: SystemConfig, phi: np.ndarray, temporal, k_p: int = 0) -> ConditionalModel:
    """MB conditional model at block ``k`` of the window starting at ``k_p``.

    ``c = w(k).q(k)`` and ``Sigma22 = nu(k) Phi + (sigma^2 ||w||^2 / eps_p) I``.
    """
    s = mb_scalars(k, k_p, cfg.frame_len, rho_function(temporal, cfg))
    phi = np.asarray(phi, dtype=complex)
    s22 = s.nu * phi + (cfg.noise_var * s.w_norm2 / cfg.pilot_power) * np.eye(phi.shape[0])
    return ConditionalModel(s.c, phi, s22, cfg.noise_var, "MB", int(k))


def dd_statistics(cfg: SystemConfig, phi: np.ndarray, temporal, noise_scale: Optional[float] = None) -> ConditionalModel:
    """DD conditional model, independent of the block index.

    ``c = rho_T(1)`` and ``Sigma22 = Phi + (sigma^2 / noise_scale) I`` with
    ``noise_scale`` defaulting to the pilot energy.
    """
    rho1 = float(rho_function(temporal, cfg)(1))
    phi = np.asarray(phi, dtype=complex)
    scale = cfg.pilot_power if noise_scale is None else noise_scale
    s22 = phi + (cfg.noise_var / scale) * np.eye(phi.shape[0])
    return ConditionalModel(rho1, phi, s22, cfg.noise_var, "DD", None)


def reduced_statistics(side: str, estimator: str, cfg: SystemConfig, phi_side: np.ndarray, temporal, k: Optional[int] = None, k_p: int = 0) -> ConditionalModel:
    """One-sided conditional model for the ZRC (``N_T``) or ZTC (``N_R``) detectors.

    For MB both sides use ``Sigma22 = nu Phi_x + sigma^2 ||w||^2 / eps_p I``.
    For DD the ZRC estimate noise is ``sigma^2 / eps_s`` (data blocks act as
    pilots) and the ZTC noise is ``sigma^2 / eps_p``.
    """
    side = side.lower()
    if side not in ("zrc", "ztc"):
        raise ValueError("side must be 'zrc' or 'ztc'")
    if estimator.upper() == "MB":
        if k is None:
            raise ValueError("MB statistics need a block index")
        return mb_statistics(k, cfg, phi_side, temporal, k_p)
    scale = cfg.symbol_power if side == "zrc" else cfg.pilot_power
    return dd_statistics(cfg, phi_side, temporal, noise_scale=scale)


# ---------------------------------------------------------------------------
# statistics cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ProfileGroup:
    label_idx: np.ndarray  # indices into CandidateSet.label_vectors
    u: np.ndarray  # (q, B) reciprocal symbols
    W: np.ndarray  # (P, D, D) or (P, B, B) inverse Cholesky factors
    logdet: np.ndarray  # (P,), already multiplied by N_R on the zrc side
    jac: float
    slot_u: Optional[tuple] = None  # per-slot reciprocal symbols when the group is a product set


@dataclass(frozen=True)
class DetectorStatistics:
    """Precomputed, read-only statistics for one detector at one block index.

    ``side`` is ``"full"``, ``"zrc"`` or ``"ztc"``.  For SM/SSK candidate
    sets the whitening factors are grouped by antenna pattern and symbol
    magnitude profile; for SMX they are stored per candidate.
    """

    side: str
    model: ConditionalModel = field(repr=False)
    cfg: SystemConfig = field(repr=False)
    candidates: CandidateSet = field(repr=False)
    A: np.ndarray = field(repr=False)
    groups: tuple = field(default=(), repr=False)
    W_cand: Optional[np.ndarray] = field(default=None, repr=False)
    logdet_cand: Optional[np.ndarray] = field(default=None, repr=False)


def _pattern_index(patterns: np.ndarray, n_rx: int) -> np.ndarray:
    return (patterns[:, :, None] * n_rx + np.arange(n_rx)).reshape(patterns.shape[0], -1)


def _profile_groups(cands: CandidateSet):
    sym = cands.symbol_vectors
    energy = np.round(np.abs(sym) ** 2, 12)
    keys, inverse = np.unique(energy, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for g, e in enumerate(keys):
        idx = np.flatnonzero(inverse == g)
        yield idx, e, 1.0 / sym[idx]


def _slot_factors(cands: CandidateSet, idx: np.ndarray):
    """Per-slot reciprocal symbols if ``idx`` is the lexicographic product of per-slot label sets."""
    labs = cands.label_vectors[idx]
    per_slot = [np.unique(labs[:, j]) for j in range(labs.shape[1])]
    if int(np.prod([p.size for p in per_slot])) != idx.size:
        return None
    M = cands.const.order
    grid = np.stack(np.meshgrid(*per_slot, indexing="ij"), axis=-1).reshape(-1, len(per_slot))
    lex = grid @ (M ** np.arange(len(per_slot) - 1, -1, -1))
    if not np.array_equal(lex, idx):
        return None
    return tuple(1.0 / cands.const.by_label[p] for p in per_slot)


def build_statistics(model: ConditionalModel, cfg: SystemConfig, side: str = "full", candidates: Optional[CandidateSet] = None) -> DetectorStatistics:
    """Whitening factors and log-determinants for every candidate group."""
    cands = candidates or enumerate_candidates(cfg)
    psi = model.psi_cond
    s2 = cfg.noise_var
    A = model.A
    if side == "ztc":
        # X X^H ~ eps_s I makes the covariance candidate independent
        c_bar = s2 * np.eye(cfg.n_rx) + cfg.symbol_power * psi
        W, ld = inv_cholesky(c_bar)
        return DetectorStatistics(side, model, cfg, cands, A, W_cand=W, logdet_cand=np.asarray(ld))
    if cands.mode == "SMX":
        X = cands.X
        if side == "full":
            xk = np.einsum("nab,rs->nbras", X, np.eye(cfg.n_rx)).reshape(len(cands), cfg.block_len * cfg.n_rx, -1)
            cov = s2 * np.eye(xk.shape[1]) + xk @ psi @ np.conj(np.swapaxes(xk, 1, 2))
        else:
            cov = s2 * np.eye(cfg.block_len) + np.swapaxes(X, 1, 2) @ psi @ X.conj()
        W, ld = inv_cholesky(cov)
        return DetectorStatistics(side, model, cfg, cands, A, W_cand=W, logdet_cand=ld)
    pats = cands.patterns
    groups = []
    for idx, e, u in _profile_groups(cands):
        if side == "full":
            pidx = _pattern_index(pats, cfg.n_rx)
            sub = psi[pidx[:, :, None], pidx[:, None, :]]
            noise = np.repeat(s2 / e, cfg.n_rx)
        else:
            sub = psi[pats[:, :, None], pats[:, None, :]]
            noise = s2 / e
        cov = sub + np.diag(noise)
        W, ld = inv_cholesky(cov)
        if side == "zrc":
            ld = cfg.n_rx * ld
        jac = cfg.n_rx * float(np.sum(np.log(e)))
        groups.append(_ProfileGroup(idx, u, W, ld, jac, _slot_factors(cands, idx)))
    return DetectorStatistics(side, model, cfg, cands, A, groups=tuple(groups))


# ---------------------------------------------------------------------------
# metric engine
# ---------------------------------------------------------------------------


def _group_terms(stats: DetectorStatistics, grp: _ProfileGroup, Y: np.ndarray, H_hat: np.ndarray):
    """Return ``G`` of shape ``(P, B, D)`` and ``g`` of shape ``(P, D)``."""
    cfg = stats.cfg
    pats = stats.candidates.patterns
    P, B, n_r = pats.shape[0], cfg.block_len, cfg.n_rx
    W = grp.W
    if stats.side == "full":
        mu = stats.A @ vec(H_hat)
        mu_l = mu[_pattern_index(pats, n_r)]
        g = np.einsum("pde,pe->pd", W, mu_l)
        Wb = W.reshape(P, B * n_r, B, n_r)
        G = np.einsum("pdjr,rj->pjd", Wb, Y)
        return G, g
    # zrc: rows of Y are independent with a B x B covariance
    gain = H_hat @ stats.A.T
    M = gain[:, pats]  # (N_R, P, B)
    g = np.einsum("pab,rpb->par", W, M).reshape(P, -1)
    G = np.einsum("paj,rj->pjar", W, Y).reshape(P, B, -1)
    return G, g


def _full_metrics(stats: DetectorStatistics, Y: np.ndarray, H_hat: np.ndarray) -> np.ndarray:
    cands = stats.candidates
    out = np.full((cands.n_patterns, cands.n_labelvecs), np.inf)
    for grp in stats.groups:
        G, g = _group_terms(stats, grp, Y, H_hat)
        if grp.slot_u is not None:
            vals = _product_metrics(G, g, grp.slot_u)
        else:
            resid = np.matmul(grp.u[None], G)
            resid -= g[:, None, :]
            vals = np.square(resid.real).sum(-1) + np.square(resid.imag).sum(-1)
        out[:, grp.label_idx] = vals + grp.logdet[:, None] + grp.jac
    return out


def _product_metrics(G: np.ndarray, g: np.ndarray, slot_u) -> np.ndarray:
    """``||u G - g||^2`` over a product set of per-slot values, shape ``(P, q)``.

    Expands into ``||g||^2``, per-slot terms ``|u_j|^2 Gram_jj - 2 Re(u_j lin_j)``
    and cross terms ``2 Re(u_j conj(u_j') Gram_jj')``, broadcast over the
    label grid so the ``D`` axis is reduced once per pattern.
    """
    P, B, _ = G.shape
    gram = G @ np.conj(np.swapaxes(G, 1, 2))  # (P, B, B)
    lin = np.einsum("pjd,pd->pj", G, np.conj(g))
    shape = (P,) + tuple(v.size for v in slot_u)
    total = np.broadcast_to(np.sum(np.abs(g) ** 2, axis=1).reshape((P,) + (1,) * B), shape).copy()

    def expand(arr, axes):
        sh = [P] + [1] * B
        for a in axes:
            sh[a + 1] = shape[a + 1]
        return arr.reshape(sh)

    for j, u in enumerate(slot_u):
        term = np.abs(u) ** 2 * gram[:, j, j].real[:, None] - 2.0 * (u[None, :] * lin[:, j, None]).real
        total += expand(term, [j])
        for j2 in range(j + 1, B):
            u2 = slot_u[j2]
            cross = 2.0 * (gram[:, j, j2, None, None] * u[None, :, None] * np.conj(u2)[None, None, :]).real
            total += expand(cross, [j, j2])
    return total.reshape(P, -1)


def _check_finite(metrics: np.ndarray):
    if not np.all(np.isfinite(metrics)):
        raise FloatingPointError("non-finite detection metric")


def detect_full_search(Y: np.ndarray, H_hat: np.ndarray, stats: DetectorStatistics) -> Decision:
    """Exhaustive likelihood search over the candidate set.

    Works for the ``full`` (CEEA-ML) and ``zrc`` sides; ties go to the
    first candidate in lexicographic order.
    """
    cands = stats.candidates
    if len(cands) == 0:
        raise EmptyCandidateSet("no candidates to search")
    if stats.side == "ztc":
        return detect_ztc(Y, H_hat, stats)
    if cands.mode == "SMX":
        return detect_general(Y, H_hat, stats)
    metrics = _full_metrics(stats, np.asarray(Y), np.asarray(H_hat))
    _check_finite(metrics)
    flat = int(np.argmin(metrics))
    return Decision(cands.block(flat), float(metrics.ravel()[flat]), flat)


def general_metrics(Y: np.ndarray, H_hat: np.ndarray, stats: DetectorStatistics) -> np.ndarray:
    """Per-candidate metric computed directly from ``X`` (any candidate set).

    Slow but literal; used for SMX and as an oracle for the grouped engine.
    """
    cfg, cands = stats.cfg, stats.candidates
    X = cands.X
    if stats.W_cand is not None and stats.side != "ztc":
        W, ld = stats.W_cand, stats.logdet_cand
    else:
        W = ld = None
    if stats.side == "full":
        xk = np.einsum("nab,rs->nbras", X, np.eye(cfg.n_rx)).reshape(len(cands), cfg.block_len * cfg.n_rx, -1)
        mean = xk @ (stats.A @ vec(H_hat))
        if W is None:
            cov = cfg.noise_var * np.eye(xk.shape[1]) + xk @ stats.model.psi_cond @ np.conj(np.swapaxes(xk, 1, 2))
            W, ld = inv_cholesky(cov)
        r = np.einsum("nde,ne->nd", W, vec(Y)[None, :] - mean)
        return np.sum(np.abs(r) ** 2, axis=1) + ld
    if stats.side == "zrc":
        M = (H_hat @ stats.A.T) @ X  # (n, N_R, B)
        if W is None:
            cov = cfg.noise_var * np.eye(cfg.block_len) + np.swapaxes(X, 1, 2) @ stats.model.psi_cond @ X.conj()
            W, ld = inv_cholesky(cov)
        R = np.asarray(Y)[None] - M
        r = np.einsum("nab,nrb->nra", W, R)
        return np.sum(np.abs(r) ** 2, axis=(1, 2)) + cfg.n_rx * ld
    W, ld = stats.W_cand, stats.logdet_cand
    M = (stats.A @ H_hat) @ X
    r = np.einsum("ab,nbj->naj", W, np.asarray(Y)[None] - M)
    return np.sum(np.abs(r) ** 2, axis=(1, 2)) + cfg.block_len * float(ld)


def detect_general(Y: np.ndarray, H_hat: np.ndarray, stats: DetectorStatistics) -> Decision:
    cands = stats.candidates
    if len(cands) == 0:
        raise EmptyCandidateSet("no candidates to search")
    m = general_metrics(np.asarray(Y), np.asarray(H_hat), stats)
    _check_finite(m)
    i = int(np.argmin(m))
    return Decision(cands.block(i), float(m[i]), i)


# ---------------------------------------------------------------------------
# per-slot detectors (ZTC, mismatched, perfect CSI)
# ---------------------------------------------------------------------------


def detect_per_slot(Y: np.ndarray, H_eff: np.ndarray, cfg: SystemConfig, W: Optional[np.ndarray] = None, const: Optional[Constellation] = None, offset: float = 0.0) -> Decision:
    """Minimise ``sum_j ||W (y_j - s_j H_eff[:, l_j])||^2`` slot by slot.

    With ``W = I`` and ``H_eff = H_hat`` this is the mismatched rule; with
    the true channel it is the perfect-CSI rule.  SMX blocks fall back to
    an exhaustive search.
    """
    const = const or constellation_for(cfg)
    Y = np.asarray(Y)
    if W is not None:
        Y = W @ Y
        H_eff = W @ H_eff
    if cfg.signal == "SMX":
        cands = enumerate_candidates(cfg)
        d = Y[None] - H_eff @ cands.X
        m = np.sum(np.abs(d) ** 2, axis=(1, 2)) + offset
        i = int(np.argmin(m))
        return Decision(cands.block(i), float(m[i]), i)
    pts = const.by_label
    # (B, N_T, M, N_R)
    resid = Y.T[:, None, None, :] - pts[None, None, :, None] * H_eff.T[None, :, None, :]
    m = np.sum(resid.real**2 + resid.imag**2, axis=-1).reshape(cfg.block_len, -1)
    _check_finite(m)
    best = np.argmin(m, axis=1)
    ant, lab = np.divmod(best, const.order)
    X = np.zeros((cfg.n_tx, cfg.block_len), dtype=complex)
    X[ant, np.arange(cfg.block_len)] = pts[lab]
    block = SMBlock(X, lab, ant)
    cands_index = _sm_index(ant, lab, cfg.n_tx, const.order)
    return Decision(block, float(m[np.arange(cfg.block_len), best].sum() + offset), cands_index)


def _sm_index(ant, lab, n_tx, order) -> int:
    pi = li = 0
    for a, b in zip(ant, lab):
        pi = pi * n_tx + int(a)
        li = li * order + int(b)
    return pi * order ** len(lab) + li


def detect_ztc(Y: np.ndarray, H_hat: np.ndarray, stats: DetectorStatistics) -> Decision:
    """ZTC rule: per-slot search whitened by the candidate-independent ``C_bar``."""
    cfg = stats.cfg
    H_eff = stats.A @ np.asarray(H_hat)
    offset = cfg.block_len * float(stats.logdet_cand)
    if cfg.signal == "SMX":
        m = general_metrics(np.asarray(Y), np.asarray(H_hat), stats)
        i = int(np.argmin(m))
        return Decision(stats.candidates.block(i), float(m[i]), i)
    return detect_per_slot(Y, H_eff, cfg, W=stats.W_cand, const=stats.candidates.const, offset=offset)


# ---------------------------------------------------------------------------
# two-stage detector
# ---------------------------------------------------------------------------

PINV_RCOND = 1e-10


def _solve_hermitian(J: np.ndarray, b: np.ndarray):
    """Batched ``J^{-1} b`` with a pseudo-inverse for ill-conditioned ``J``."""
    eig = np.linalg.eigvalsh(J)
    top = np.maximum(np.abs(eig).max(axis=-1), np.finfo(float).tiny)
    singular = eig.min(axis=-1) <= PINV_RCOND * top
    out = np.empty_like(b)
    ok = ~singular
    if np.any(ok):
        out[ok] = np.linalg.solve(J[ok], b[ok][..., None])[..., 0]
    for p in np.flatnonzero(singular):
        out[p] = np.linalg.pinv(J[p], rcond=PINV_RCOND, hermitian=True) @ b[p]
    return out, int(singular.sum())


def detect_two_stage(Y: np.ndarray, H_hat: np.ndarray, stats: DetectorStatistics) -> Decision:
    """Antenna pattern first, symbols from a quantised unconstrained solution.

    For each pattern ``L`` the metric ``||G u - g||^2`` is minimised over
    complex ``u``, giving ``s_tilde = eps_s conj(J^{-1} b)`` with
    ``J = G^H G`` and ``b = G^H g``.  Quantising ``s_tilde`` gives
    ``s_bar(L)``, and ``L`` is scored by ``log det + ||G u_bar - g||^2``.
    Requires a constant-modulus (PSK or SSK) alphabet.
    """
    cands = stats.candidates
    const = cands.const
    if cands.mode == "SMX" or not const.constant_modulus or const.kind == "QAM":
        raise UnsupportedOrder("two-stage detection needs a PSK SM candidate set")
    if len(stats.groups) != 1:
        raise UnsupportedOrder("two-stage detection needs a single magnitude profile")
    grp = stats.groups[0]
    Y, H_hat = np.asarray(Y), np.asarray(H_hat)
    G, g = _group_terms(stats, grp, Y, H_hat)  # (P, B, D), (P, D)
    Gm = np.swapaxes(G, 1, 2)  # (P, D, B)
    J = np.conj(G) @ Gm
    b = np.einsum("pjd,pd->pj", np.conj(G), g)
    u_tilde, n_sing = _solve_hermitian(J, b)
    eps = const.energy
    s_tilde = eps * np.conj(u_tilde)
    dist = np.abs(s_tilde[..., None] - const.by_label)
    labels = np.argmin(dist, axis=-1)  # (P, B)
    u_bar = 1.0 / const.by_label[labels]
    resid = np.einsum("pj,pjd->pd", u_bar, G) - g
    score = np.sum(np.abs(resid) ** 2, axis=1) + grp.logdet + grp.jac
    _check_finite(score)
    p = int(np.argmin(score))
    ant = cands.patterns[p]
    lab = labels[p]
    X = np.zeros((stats.cfg.n_tx, stats.cfg.block_len), dtype=complex)
    X[ant, np.arange(len(ant))] = const.by_label[lab]
    idx = _sm_index(ant, lab, stats.cfg.n_tx, const.order)
    return Decision(SMBlock(X, lab, ant), float(score[p]), idx, n_sing)


# ---------------------------------------------------------------------------
# detector facade
# ---------------------------------------------------------------------------


class Detector:
    """A detection rule bound to its configuration and correlation knowledge.

    Parameters
    ----------
    kind : DetectorKind or str
    cfg : SystemConfig
    phi : ndarray
        Spatial correlation assumed by the receiver (``N_R N_T`` square).
    temporal : TemporalModel or callable
        Temporal correlation assumed by the receiver.
    k_p : int
        First pilot epoch of MB windows.

    Statistics are built lazily per block index and cached; the cache is
    never mutated after an entry is created.
    """

    def __init__(self, kind, cfg: SystemConfig, phi=None, temporal=None, k_p: int = 0):
        self.kind = DetectorKind.parse(kind)
        self.cfg = cfg
        self.k_p = k_p
        self.temporal = temporal
        n = cfg.n_tx * cfg.n_rx
        self.phi = np.eye(n, dtype=complex) if phi is None else np.asarray(phi, dtype=complex)
        if self.kind.two_stage and (cfg.mod_kind != "PSK" or cfg.signal == "SMX"):
            raise UnsupportedOrder("two-stage detectors need PSK spatial modulation")
        self._candidates: Optional[CandidateSet] = None
        self._cache: Dict[Optional[int], DetectorStatistics] = {}

    @property
    def candidates(self) -> CandidateSet:
        if self._candidates is None:
            self._candidates = enumerate_candidates(self.cfg)
        return self._candidates

    def model(self, k: Optional[int] = None) -> ConditionalModel:
        est = self.kind.estimator
        side = self.kind.side
        if side == "full":
            if est == "MB":
                return mb_statistics(k, self.cfg, self.phi, self.temporal, self.k_p)
            return dd_statistics(self.cfg, self.phi, self.temporal)
        phi_t, phi_r = partial_correlations(self.phi, self.cfg.n_tx, self.cfg.n_rx)
        phi_side = phi_t if side == "zrc" else phi_r
        return reduced_statistics(side, est, self.cfg, phi_side, self.temporal, k, self.k_p)

    def statistics(self, k: Optional[int] = None, use_cache: bool = True) -> DetectorStatistics:
        if self.kind.estimator != "MB":
            k = None
        if use_cache and k in self._cache:
            return self._cache[k]
        stats = build_statistics(self.model(k), self.cfg, self.kind.side, self.candidates)
        if use_cache:
            self._cache[k] = stats
        return stats

    def detect(self, Y: np.ndarray, H_hat: np.ndarray, k: Optional[int] = None, use_cache: bool = True) -> Decision:
        """Detect one block.  ``H_hat`` is the true channel for PerfectCSI."""
        fam = self.kind.family
        if fam in ("perfect", "mismatched"):
            return detect_per_slot(Y, np.asarray(H_hat), self.cfg, const=self.candidates.const)
        stats = self.statistics(k, use_cache)
        if self.kind.two_stage:
            return detect_two_stage(Y, H_hat, stats)
        return detect_full_search(Y, H_hat, stats)
