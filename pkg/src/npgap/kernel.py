"""Stationary kernels on [0, 1] and the closed-form cosine spectrum.

The SE experiments use the cosine convention throughout: eigenvalues
``exp(-(l*j*pi)**2 / 2)`` with eigenfunctions ``sqrt(2) cos(j pi x)`` under the
uniform measure. This is not the exact SE eigensystem on [0, 1], but it is
the basis the amortization-gap tables are defined against.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError

SQRT2 = math.sqrt(2.0)
_MATERN_NUS = (0.5, 1.5, 2.5)


class KernelFamily(str, enum.Enum):
    SQUARED_EXPONENTIAL = "se"
    MATERN = "matern"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and hyperparameters (input dimension fixed to 1).

    Parameters
    ----------
    family : KernelFamily or str
        ``"se"`` or ``"matern"``.
    lengthscale : float
        Positive lengthscale.
    signal_variance : float
        Prior variance ``k(x, x)``; also the sup of the diagonal.
    nu : float, optional
        Matérn smoothness, one of 1/2, 3/2, 5/2.
    """

    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL
    lengthscale: float = 1.0
    signal_variance: float = 1.0
    nu: float | None = None
    input_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not self.lengthscale > 0:
            raise ParameterError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.signal_variance > 0:
            raise ParameterError(f"signal_variance must be positive, got {self.signal_variance}")
        if self.input_dim != 1:
            raise ParameterError("only input_dim = 1 is supported")
        if self.family is KernelFamily.MATERN:
            if self.nu is None or not any(math.isclose(self.nu, v) for v in _MATERN_NUS):
                raise ParameterError(f"Matérn nu must be one of {_MATERN_NUS}, got {self.nu}")

    @classmethod
    def se(cls, lengthscale: float, signal_variance: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.SQUARED_EXPONENTIAL, lengthscale, signal_variance)

    @classmethod
    def matern(cls, nu: float, lengthscale: float, signal_variance: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.MATERN, lengthscale, signal_variance, nu)

    @property
    def kappa(self) -> float:
        """sup_x k(x, x)."""
        return self.signal_variance

    def matrix(self, a, b) -> np.ndarray:
        """Cross-covariance matrix ``[k(a_i, b_j)]``."""
        a = np.asarray(a, dtype=float).reshape(-1)
        b = np.asarray(b, dtype=float).reshape(-1)
        r = np.abs(a[:, None] - b[None, :])
        return self.signal_variance * _unit_profile(self, r)

    def diag(self, x) -> np.ndarray:
        return np.full(np.asarray(x).reshape(-1).shape, float(self.signal_variance))


@dataclass(frozen=True)
class NoiseModel:
    sigma_eps_sq: float = 0.05

    def __post_init__(self):
        if not self.sigma_eps_sq >= 0:
            raise ParameterError(f"noise variance must be >= 0, got {self.sigma_eps_sq}")


def _unit_profile(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    s = r / spec.lengthscale
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        return np.exp(-0.5 * s * s)
    nu = spec.nu
    if math.isclose(nu, 0.5):
        return np.exp(-s)
    if math.isclose(nu, 1.5):
        t = math.sqrt(3.0) * s
        return (1.0 + t) * np.exp(-t)
    t = math.sqrt(5.0) * s
    return (1.0 + t + t * t / 3.0) * np.exp(-t)


def eval_kernel(spec: KernelSpec, x: float, x2: float) -> float:
    return float(spec.matrix([x], [x2])[0, 0])


def gram_matrix(spec, X) -> np.ndarray:
    """Symmetric gram matrix of ``X`` under ``spec``.

    ``spec`` may be any object with a ``matrix(a, b)`` method, which lets a
    :class:`~npgap.mercer.MercerBasis` stand in for its own series kernel.
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    if X.size == 0:
        raise ParameterError("gram_matrix needs at least one location")
    K = spec.matrix(X, X)
    return 0.5 * (K + K.T)


# --- cosine spectrum -------------------------------------------------------


def cosine_eigenvalues(lengthscale: float, depth: int, signal_variance: float = 1.0) -> np.ndarray:
    """``lambda_j = kappa * exp(-(l j pi)^2 / 2)`` for ``j = 1..depth``."""
    if not lengthscale > 0:
        raise ParameterError(f"lengthscale must be positive, got {lengthscale}")
    j = np.arange(1, depth + 1, dtype=float)
    return signal_variance * np.exp(-0.5 * (lengthscale * j * np.pi) ** 2)


def cosine_eigenfunctions(x, depth: int) -> np.ndarray:
    """Matrix ``E[i, j-1] = sqrt(2) cos(j pi x_i)`` for ``j = 1..depth``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    j = np.arange(1, depth + 1, dtype=float)
    return SQRT2 * np.cos(np.pi * x[:, None] * j[None, :])


def cosine_basis_eigenpair(lengthscale: float, j: int) -> tuple[float, Callable[[float], float]]:
    if int(j) != j or j < 1:
        raise ParameterError(f"eigen-index must be a positive integer, got {j}")
    lam = float(cosine_eigenvalues(lengthscale, int(j))[-1])

    def e_j(x):
        return SQRT2 * np.cos(j * np.pi * np.asarray(x, dtype=float))

    return lam, e_j


def se_decay_exponent(lengthscale: float) -> float:
    """Exponent ``c`` in ``lambda_j ~ exp(-c j^2)`` for the cosine SE spectrum."""
    return 0.5 * (lengthscale * np.pi) ** 2
