"""Mercer spectral machinery: head/tail splits, tails, truncated GP variance.

All bases live on [0, 1] under the uniform base measure, which is also the
distribution context locations are drawn from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from ._linalg import chol_solve, inv_sqrt_psd, robust_cholesky
from .errors import NumericalError, ParameterError
from .kernel import KernelFamily, KernelSpec, cosine_eigenfunctions, cosine_eigenvalues, se_decay_exponent

DEFAULT_DEPTH = 64


@dataclass(frozen=True)
class MercerBasis:
    """Eigenvalues and an eigenfunction evaluator, truncated at ``depth``.

    ``eigenfunctions(x, J)`` returns the ``(len(x), J)`` matrix of the first
    ``J`` eigenfunctions evaluated at ``x``.
    """

    eigenvalues: np.ndarray
    eigenfunctions: Callable[[np.ndarray, int], np.ndarray]
    base_measure: str = "uniform01"
    kind: str = "cosine"
    grid: np.ndarray | None = field(default=None, repr=False, compare=False)
    grid_values: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ParameterError("eigenvalues must be a non-empty vector")
        # deep cosine eigenvalues underflow to exactly 0.0 for long lengthscales
        if np.any(lam < 0) or np.any(np.diff(lam) > 0):
            raise ParameterError("eigenvalues must be non-negative and non-increasing")
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def depth(self) -> int:
        return self.eigenvalues.size

    @classmethod
    def cosine(cls, lengthscale: float, depth: int = DEFAULT_DEPTH, signal_variance: float = 1.0) -> "MercerBasis":
        return cls(cosine_eigenvalues(lengthscale, depth, signal_variance), cosine_eigenfunctions, kind="cosine")

    def features(self, x, J: int | None = None) -> np.ndarray:
        """Scaled features ``sqrt(lambda_j) e_j(x)`` for ``j <= J``."""
        J = self.depth if J is None else J
        return self.eigenfunctions(x, J) * np.sqrt(self.eigenvalues[:J])

    def matrix(self, a, b, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Series kernel ``sum_{lo < j <= hi} lambda_j e_j(a) e_j(b)``."""
        hi = self.depth if hi is None else hi
        Fa = self.features(a, hi)[:, lo:]
        Fb = self.features(b, hi)[:, lo:]
        return Fa @ Fb.T

    def diag(self, x, lo: int = 0, hi: int | None = None) -> np.ndarray:
        hi = self.depth if hi is None else hi
        F = self.features(x, hi)[:, lo:]
        return np.einsum("ij,ij->i", F, F)


def _check_depth(basis: MercerBasis, d: int, allow_full: bool = False) -> None:
    if int(d) != d or d < 0:
        raise ParameterError(f"truncation index must be a non-negative integer, got {d}")
    if d > basis.depth or (d == basis.depth and not allow_full):
        raise ParameterError(f"d = {d} but the basis only resolves {basis.depth} terms; the tail is not resolvable")


def tail_sum(basis: MercerBasis, d: int, x_star: float) -> float:
    """Kernel tail ``sum_{d < j <= J_max} lambda_j e_j(x_star)^2``."""
    _check_depth(basis, d)
    return float(basis.diag([x_star], lo=d)[0])


@dataclass(frozen=True)
class HeadTailSplit:
    d: int
    X: np.ndarray
    sigma_eps_sq: float
    K_H: np.ndarray
    K_T: np.ndarray
    A: np.ndarray


def head_tail_split(basis: MercerBasis, d: int, X, sigma_eps_sq: float) -> HeadTailSplit:
    """Split the context gram matrix at eigen-index ``d``.

    ``d`` may equal the basis depth, in which case the tail is empty.
    """
    if not sigma_eps_sq > 0:
        raise ParameterError("head/tail split needs sigma_eps^2 > 0")
    _check_depth(basis, d, allow_full=True)
    X = np.asarray(X, dtype=float).reshape(-1)
    F = basis.features(X)
    FH, FT = F[:, :d], F[:, d:]
    K_H = FH @ FH.T
    K_T = FT @ FT.T
    A = K_H + sigma_eps_sq * np.eye(X.size)
    return HeadTailSplit(int(d), X, float(sigma_eps_sq), K_H, K_T, A)


def tail_operator_norm(split: HeadTailSplit) -> float:
    """``eta(X) = || A^{-1/2} K_T A^{-1/2} ||_op``."""
    n = split.X.size
    if n == 0:
        return 0.0
    w = np.linalg.eigvalsh(split.A)
    if w[0] <= 0:
        raise NumericalError(f"A is not positive definite (min eigenvalue {w[0]:.3e})")
    S = inv_sqrt_psd(split.A)
    P = S @ split.K_T @ S
    return float(max(np.linalg.eigvalsh(0.5 * (P + P.T))[-1], 0.0))


def truncated_gp_variance(split: HeadTailSplit, basis: MercerBasis, x_star: float) -> float:
    """Head-only GP variance ``k_H - (k_*^H)^T A^{-1} k_*^H``.

    Depends on the context only through the first ``d`` eigenfunctions.
    """
    d = split.d
    k_H = float(basis.diag([x_star], hi=d)[0])
    if split.X.size == 0:
        return k_H
    kH_star = basis.matrix(split.X, [x_star], hi=d)[:, 0]
    L, _ = robust_cholesky(split.A, ladder=(0.0,))
    q = float(kH_star @ chol_solve(L, kH_star))
    return min(max(k_H - q, 0.0), k_H)


def truncation_error_bound(split: HeadTailSplit, basis: MercerBasis, x_star: float, kappa: float) -> float:
    """Constant-explicit bound on ``|sigma^2_GP - sigma_d^2|`` (requires eta < 1).

    ``k_T + 2 sqrt(kappa k_T)/s2 + k_T/s2 + eta/(1-eta) (sqrt(kappa) + sqrt(k_T))^2 / s2``
    """
    eta = tail_operator_norm(split)
    if eta >= 1:
        return math.inf
    s2 = split.sigma_eps_sq
    kT = tail_sum(basis, split.d, x_star) if split.d < basis.depth else 0.0
    return (
        kT
        + 2.0 * math.sqrt(kappa * kT) / s2
        + kT / s2
        + eta / (1.0 - eta) * (math.sqrt(kappa) + math.sqrt(kT)) ** 2 / s2
    )


def nystrom_eigendecomposition(spec: KernelSpec, N: int = 2000, J: int = 16) -> MercerBasis:
    """Top-``J`` eigenpairs of the integral operator under Uniform[0, 1].

    The gram matrix on ``N`` equispaced grid points (endpoints included) is
    eigendecomposed; eigenvalues are divided by ``N`` and eigenvectors are
    scaled to unit discrete L2 norm, ``(1/N) sum_g e_j(x_g)^2 = 1``. Signs are
    fixed so that ``e_j`` is non-negative at the first grid point. Off-grid
    evaluations interpolate linearly.
    """
    if J < 1 or N < 10 * J:
        raise ParameterError(f"Nystrom needs N >= 10 J (got N = {N}, J = {J})")
    grid = np.linspace(0.0, 1.0, N)
    K = spec.matrix(grid, grid)
    K = 0.5 * (K + K.T)
    w, V = scipy.linalg.eigh(K, subset_by_index=[N - J, N - 1])
    w, V = w[::-1], V[:, ::-1]
    lam = np.maximum(w / N, 0.0)
    E = V * math.sqrt(N)
    E *= np.where(E[0] < 0, -1.0, 1.0)

    def evaluate(x, Jq: int) -> np.ndarray:
        if Jq > J:
            raise ParameterError(f"Nystrom basis only holds {J} eigenfunctions")
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.stack([np.interp(x, grid, E[:, j]) for j in range(Jq)], axis=1) if Jq else np.zeros((x.size, 0))

    return MercerBasis(lam, evaluate, kind="nystrom", grid=grid, grid_values=E)


def bottleneck_rate(family, d: int, lengthscale: float | None = None, nu: float | None = None) -> float:
    """Constant-free bottleneck rate factor.

    SE: ``exp(-c d^2)`` with ``c = (l pi)^2 / 2`` from the cosine spectrum.
    Matérn-nu: ``d^(-2 nu)``. The absolute constants are unspecified and are
    not included.
    """
    family = KernelFamily(family)
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    if family is KernelFamily.SQUARED_EXPONENTIAL:
        if lengthscale is None:
            raise ParameterError("SE rate needs a lengthscale")
        return math.exp(-se_decay_exponent(lengthscale) * d * d)
    if nu is None or nu <= 0:
        raise ParameterError("Matérn rate needs nu > 0")
    return float(d) ** (-2.0 * nu)


def effective_dimension(eigenvalues) -> float:
    """``(sum lambda^2) / (sum lambda)^2``."""
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1)
    if lam.size == 0:
        raise ParameterError("effective_dimension of an empty spectrum")
    if np.any(lam < 0) or lam.sum() <= 0:
        raise ParameterError("eigenvalues must be non-negative with a positive sum")
    return float(np.sum(lam**2) / np.sum(lam) ** 2)
