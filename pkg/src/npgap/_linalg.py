from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NumericalError

# relative to the mean diagonal
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


def robust_cholesky(M: np.ndarray, ladder=JITTER_LADDER, scale: float | None = None) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``M``, retrying with increasing diagonal jitter.

    Jitter levels in ``ladder`` multiply ``scale`` (default: mean diagonal).
    Returns ``(L, jitter)`` where ``jitter`` is the absolute amount added.
    """
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    if scale is None:
        scale = float(np.trace(M)) / n
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    eye = np.eye(n)
    for rel in ladder:
        jitter = rel * scale
        try:
            L = np.linalg.cholesky(M + jitter * eye if jitter else M)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jitter
    raise NumericalError(
        f"Cholesky failed on a {n}x{n} matrix after jitter up to {ladder[-1]:g} x mean diagonal"
        f" (min eigenvalue {np.linalg.eigvalsh(0.5 * (M + M.T))[0]:.3e})"
    )


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve((L, True), b, check_finite=False)


def inv_sqrt_psd(A: np.ndarray, floor_rel: float = 1e-12) -> np.ndarray:
    """Symmetric ``A^{-1/2}`` with eigenvalues floored at ``floor_rel * trace(A)``."""
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    w = np.maximum(w, floor_rel * max(float(np.trace(A)), np.finfo(float).tiny))
    return (V / np.sqrt(w)) @ V.T


def spd_inverse(P: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    L, _ = robust_cholesky(P, ladder=(0.0,))
    Linv = scipy.linalg.solve_triangular(L, np.eye(P.shape[0]), lower=True, check_finite=False)
    out = Linv.T @ Linv
    return 0.5 * (out + out.T)
