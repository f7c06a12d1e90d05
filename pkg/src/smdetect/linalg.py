"""Cholesky-based kernels shared by the detectors and the analysis code."""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .errors import NotPositiveDefinite

__all__ = ["cholesky", "quad_form", "logdet", "inv_cholesky", "hermitize"]

JITTER = 1e-12


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def cholesky(gamma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a (stack of) Hermitian positive definite matrices.

    One retry with ``1e-12 * scale`` added to the diagonal is allowed before
    :class:`NotPositiveDefinite` is raised.
    """
    gamma = hermitize(np.asarray(gamma))
    try:
        return np.linalg.cholesky(gamma)
    except np.linalg.LinAlgError:
        pass
    n = gamma.shape[-1]
    diag = np.abs(np.diagonal(gamma, axis1=-2, axis2=-1)).max(axis=-1, keepdims=True)
    scale = np.maximum(diag, 1.0)[..., None]
    try:
        return np.linalg.cholesky(gamma + JITTER * scale * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc


def quad_form(gamma: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """``chi^H gamma^{-1} chi`` through a Cholesky solve.

    ``chi`` may be a vector, giving a scalar, or a matrix.
    """
    chi = np.asarray(chi)
    vector = chi.ndim == 1
    c = cholesky(gamma)
    z = sla.solve_triangular(c, chi[:, None] if vector else chi, lower=True)
    out = z.conj().T @ z
    if vector:
        return out[0, 0].real
    return hermitize(out)


def logdet(gamma: np.ndarray) -> np.ndarray:
    """Log-determinant of (a stack of) HPD matrices."""
    c = cholesky(gamma)
    return 2.0 * np.log(np.diagonal(c, axis1=-2, axis2=-1).real).sum(axis=-1)


def inv_cholesky(gamma: np.ndarray):
    """Return ``(W, logdet)`` with ``W = chol(gamma)^{-1}``, so ``W^H W = gamma^{-1}``.

    ``||W x||^2`` is then the quadratic form ``x^H gamma^{-1} x``.
    """
    c = cholesky(gamma)
    n = c.shape[-1]
    eye = np.broadcast_to(np.eye(n, dtype=c.dtype), c.shape)
    w = np.linalg.solve(c, eye)
    w = np.tril(w)
    ld = 2.0 * np.log(np.diagonal(c, axis1=-2, axis2=-1).real).sum(axis=-1)
    return w, ld
