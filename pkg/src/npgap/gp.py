"""Exact GP regression, prior sampling, and the univariate Gaussian KL."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from ._linalg import chol_solve, robust_cholesky
from .errors import ParameterError, SingularMatrixError
from .kernel import KernelSpec, NoiseModel
from .seeding import as_rng

SAMPLE_JITTER = 1e-10


class DegenerateBoundWarning(RuntimeWarning):
    """Lower variance bound collapses to zero (noiseless observations)."""


@dataclass(frozen=True)
class ContextSet:
    """Context locations ``X`` in [0, 1], labels ``y`` and the noise model.

    ``f`` optionally holds the latent GP values that generated ``y``.
    """

    X: np.ndarray
    y: np.ndarray
    noise: NoiseModel = field(default_factory=NoiseModel)
    f: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape != y.shape:
            raise ParameterError(f"|X| = {X.size} but |y| = {y.size}")
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ParameterError("context locations must lie in [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.size

    @classmethod
    def empty(cls, noise: NoiseModel | None = None) -> "ContextSet":
        return cls(np.zeros(0), np.zeros(0), noise or NoiseModel())


@dataclass(frozen=True)
class GaussianPredictive:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterError(f"predictive variance must be positive, got {self.variance}")


def _check_noiseless_duplicates(X: np.ndarray, sigma_sq: float) -> None:
    if sigma_sq == 0 and X.size != np.unique(X).size:
        raise SingularMatrixError("noiseless context with duplicated locations: K + 0*I is singular")


def gp_posterior_arrays(kernel, ctx: ContextSet, x_star) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predictive mean and variance at each entry of ``x_star``.

    ``kernel`` is anything with a ``matrix(a, b)`` method.
    """
    xs = np.asarray(x_star, dtype=float).reshape(-1)
    prior = kernel.diag(xs)
    if len(ctx) == 0:
        return np.zeros_like(xs), prior
    s2 = ctx.noise.sigma_eps_sq
    _check_noiseless_duplicates(ctx.X, s2)
    K = kernel.matrix(ctx.X, ctx.X)
    K = 0.5 * (K + K.T)
    L, _ = robust_cholesky(K + s2 * np.eye(len(ctx)))
    Ks = kernel.matrix(ctx.X, xs)  # (n, m)
    alpha = chol_solve(L, ctx.y)
    mean = Ks.T @ alpha
    V = scipy.linalg.solve_triangular(L, Ks, lower=True, check_finite=False)
    var = prior - np.einsum("ij,ij->j", V, V)
    return mean, var


def gp_posterior(kernel, ctx: ContextSet, x_star: float) -> GaussianPredictive:
    """Exact predictive ``N(mu_GP, sigma^2_GP)`` at a single target via Cholesky."""
    mean, var = gp_posterior_arrays(kernel, ctx, [x_star])
    return GaussianPredictive(float(mean[0]), float(var[0]))


def sample_gp(kernel, X, seed, size: int | None = None) -> np.ndarray:
    """Joint prior draw(s) ``f(X) ~ N(0, K)``.

    Deterministic given ``seed``. With ``size`` the result has shape
    ``(size, len(X))``.
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    if X.size == 0:
        raise ParameterError("sample_gp needs at least one location")
    rng = as_rng(seed)
    K = kernel.matrix(X, X)
    K = 0.5 * (K + K.T)
    kappa = float(np.max(np.diag(K)))
    L, _ = robust_cholesky(K, ladder=(SAMPLE_JITTER, 1e-8, 1e-6), scale=kappa)
    shape = (X.size,) if size is None else (size, X.size)
    z = rng.standard_normal(shape)
    return z @ L.T


def gaussian_kl(p: GaussianPredictive, q: GaussianPredictive) -> float:
    """``KL(p || q)`` for univariate Gaussians.

    The ratio part ``r - 1 - log r`` is evaluated as ``expm1(u) - u`` with
    ``u = log r`` so it stays accurate when the variances nearly coincide.
    """
    if not (p.variance > 0 and q.variance > 0):
        raise ParameterError("KL needs positive variances")
    u = math.log(p.variance) - math.log(q.variance)
    ratio_term = math.expm1(u) - u
    shift = (p.mean - q.mean) ** 2 / q.variance
    return 0.5 * (ratio_term + shift)


class VarianceBounds(NamedTuple):
    lower: float
    upper: float


def variance_bounds(spec: KernelSpec, noise: NoiseModel) -> VarianceBounds:
    """GP-side constants with ``lower <= sigma^2_GP <= upper`` for every context."""
    kappa = spec.kappa
    s2 = noise.sigma_eps_sq
    if s2 == 0:
        warnings.warn("sigma_eps^2 = 0: the lower variance bound is degenerate", DegenerateBoundWarning, stacklevel=2)
        return VarianceBounds(0.0, kappa)
    if math.isinf(s2):
        return VarianceBounds(kappa, kappa)
    return VarianceBounds(s2 * kappa / (kappa + s2), kappa)
