"""Analytic latent neural process: Mercer encoder, linear decoder, exact latent posterior.

With decoder ``w(x)^T z + b(x)`` and prior ``z ~ N(0, I)`` the posterior over
``z`` given a context is Gaussian with precision
``I + sigma_d^{-2} sum_i w(x_i) w(x_i)^T``. Everything here is closed form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._linalg import spd_inverse
from .errors import ParameterError
from .gp import GaussianPredictive
from .mercer import MercerBasis


class Aggregation(str, enum.Enum):
    MEAN = "mean"
    SECOND_ORDER = "second_order"


def _canonical_order(X: np.ndarray, *others: np.ndarray) -> np.ndarray:
    # sorting rows makes floating-point reductions independent of input order
    keys = [X] + [o for o in others]
    return np.lexsort(tuple(k for k in reversed(keys)))


# --- encoders ---------------------------------------------------------------


@dataclass(frozen=True)
class MercerEncoder:
    """``phi(x) = (sqrt(lambda_1) e_1(x), ..., sqrt(lambda_d) e_d(x))``; ignores ``y``."""

    basis: MercerBasis
    d: int

    def __post_init__(self):
        if not 1 <= self.d <= self.basis.depth:
            raise ParameterError(f"encoder dimension {self.d} outside 1..{self.basis.depth}")

    def phi(self, X) -> np.ndarray:
        return self.basis.features(X, self.d)

    def encode(self, X, y=None) -> np.ndarray:
        return self.phi(X)


@dataclass(frozen=True)
class AffineEncoder:
    """``h(x, y) = phi(x) + psi(x) y`` with norm bounds ``B_phi``, ``B_psi``."""

    phi: Callable[[np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray], np.ndarray]
    B_phi: float = np.inf
    B_psi: float = np.inf

    def encode(self, X, y) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        return self.phi(X) + self.psi(X) * y[:, None]

    def check_bounds(self, grid_size: int = 2001) -> bool:
        g = np.linspace(0.0, 1.0, grid_size)
        return bool(
            np.linalg.norm(self.phi(g), axis=1).max() <= self.B_phi
            and np.linalg.norm(self.psi(g), axis=1).max() <= self.B_psi
        )


def encode(encoder, x: float, y: float) -> np.ndarray:
    return encoder.encode(np.array([x]), np.array([y]))[0]


# --- aggregation ------------------------------------------------------------


@dataclass(frozen=True)
class Representation:
    mode: Aggregation
    value: np.ndarray


def aggregate(features, mode=Aggregation.MEAN) -> Representation:
    """Mean or second-order pooling of per-point features ``(n, d)``.

    Rows are put in a canonical order first, so the result is bit-identical
    under any permutation of the context.
    """
    mode = Aggregation(mode)
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    n = F.shape[0]
    if n == 0:
        raise ParameterError("cannot aggregate an empty context")
    F = F[np.lexsort(F.T[::-1])]
    if mode is Aggregation.MEAN:
        return Representation(mode, F.sum(axis=0) / n)
    return Representation(mode, (F.T @ F) / n)


def mean_representation_decomposition(encoder: AffineEncoder, X, y) -> tuple[np.ndarray, np.ndarray]:
    """Location part and label part of the mean representation.

    Returns ``(phi_bar, delta_y)`` with ``phi_bar = mean phi(x_i)`` and
    ``delta_y = mean psi(x_i) y_i``.
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.size == 0:
        raise ParameterError("cannot aggregate an empty context")
    return encoder.phi(X).mean(axis=0), (encoder.psi(X) * y[:, None]).mean(axis=0)


# --- decoder and latent posterior ---------------------------------------------


@dataclass(frozen=True)
class DecoderSpec:
    """Linear-in-z decoder ``N(w(x)^T z + b(x), sigma_d^2)``."""

    w: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    sigma_d_sq: float = 1.0
    latent_dim: int | None = None

    def __post_init__(self):
        if not self.sigma_d_sq > 0:
            raise ParameterError(f"decoder variance must be positive, got {self.sigma_d_sq}")

    @classmethod
    def mercer(cls, basis: MercerBasis, d: int, sigma_d_sq: float = 1.0) -> "DecoderSpec":
        """Decoder with ``w = phi`` (Mercer features) and ``b = 0``."""
        enc = MercerEncoder(basis, d)

        def zero(X):
            return np.zeros(np.asarray(X).reshape(-1).shape)

        return cls(enc.phi, zero, sigma_d_sq, latent_dim=d)

    def weights(self, X) -> np.ndarray:
        W = np.asarray(self.w(np.asarray(X, dtype=float).reshape(-1)), dtype=float)
        return W if W.ndim == 2 else W[:, None]


@dataclass(frozen=True)
class LatentGaussian:
    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray


def _latent_dim(decoder: DecoderSpec) -> int:
    if decoder.latent_dim is not None:
        return decoder.latent_dim
    return decoder.weights([0.5]).shape[1]


def latent_posterior(decoder: DecoderSpec, X, y=None) -> LatentGaussian:
    """Exact posterior ``N(mu_p, Sigma_p)`` of ``z`` given the context.

    The covariance depends on ``X`` only; the mean is computed when labels are
    given (otherwise zero).
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    dz = _latent_dim(decoder)
    s2 = decoder.sigma_d_sq
    if X.size == 0:
        eye = np.eye(dz)
        return LatentGaussian(np.zeros(dz), eye, eye.copy())
    if y is None:
        order = np.argsort(X, kind="stable")
        X = X[order]
    else:
        y = np.asarray(y, dtype=float).reshape(-1)
        order = _canonical_order(X, y)
        X, y = X[order], y[order]
    W = decoder.weights(X)
    P = np.eye(dz) + (W.T @ W) / s2
    P = 0.5 * (P + P.T)
    cov = spd_inverse(P)
    mean = np.zeros(dz) if y is None else cov @ (W.T @ (y - decoder.b(X))) / s2
    return LatentGaussian(mean, cov, P)


def precision_from_second_order(rep: Representation, n: int, sigma_d_sq: float) -> np.ndarray:
    """Posterior precision rebuilt from the second-order representation alone (``w = phi``)."""
    if Aggregation(rep.mode) is not Aggregation.SECOND_ORDER:
        raise ParameterError("precision needs the second-order representation")
    S = np.atleast_2d(rep.value)
    P = np.eye(S.shape[0]) + (n / sigma_d_sq) * S
    return 0.5 * (P + P.T)


def optimal_covariance_estimator(d: int, n: int, eigenvalues, sigma_d_sq: float = 1.0) -> np.ndarray:
    """Best covariance given only the mean representation: ``(I + (n/s2) Lambda_d)^{-1}``.

    Uses ``E[V_hat] = I`` (orthonormal eigenfunctions); for ``d = 1`` this is
    ``1 / (1 + alpha)`` with ``alpha = n lambda_1 / sigma_d^2``.
    """
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1)[:d]
    if lam.size < d:
        raise ParameterError(f"need {d} eigenvalues, got {lam.size}")
    if n < 0:
        raise ParameterError("n must be >= 0")
    return np.diag(1.0 / (1.0 + n * lam / sigma_d_sq))


def marginal_predictive(decoder: DecoderSpec, latent: LatentGaussian, x_star: float) -> GaussianPredictive:
    w = decoder.weights([x_star])[0]
    b = float(np.asarray(decoder.b(np.array([x_star]))).reshape(-1)[0])
    mean = float(w @ latent.mean) + b
    var = float(w @ latent.cov @ w) + decoder.sigma_d_sq
    return GaussianPredictive(mean, var)


@dataclass(frozen=True)
class BoundConstants:
    """Architectural constants of the label-contamination and combined bounds."""

    L_mu: float = 1.0
    L_sigma: float = 1.0
    B_w: float = 1.0
    B_phi: float = 1.0
    B_psi: float = 1.0

    def __post_init__(self):
        for name in ("L_mu", "L_sigma", "B_w", "B_phi", "B_psi"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")

    @property
    def Lambda(self) -> float:
        return self.L_sigma * self.B_w**2 * self.B_psi
