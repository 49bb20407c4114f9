"""GP versus latent-neural-process predictive variance: exact GP inference, Mercer
spectra, the analytic LNP, amortization-gap estimators and a small trainable LNP."""

__version__ = "0.1.0"

from .errors import CheckpointError, NumericalError, ParameterError, SingularMatrixError
from .gp import ContextSet, GaussianPredictive, gaussian_kl, gp_posterior, sample_gp, variance_bounds
from .kernel import KernelFamily, KernelSpec, NoiseModel, cosine_basis_eigenpair, eval_kernel, gram_matrix
from .mercer import (
    MercerBasis,
    bottleneck_rate,
    effective_dimension,
    head_tail_split,
    nystrom_eigendecomposition,
    tail_operator_norm,
    tail_sum,
    truncated_gp_variance,
)

__all__ = [
    "CheckpointError",
    "ContextSet",
    "GaussianPredictive",
    "KernelFamily",
    "KernelSpec",
    "MercerBasis",
    "NoiseModel",
    "NumericalError",
    "ParameterError",
    "SingularMatrixError",
    "bottleneck_rate",
    "cosine_basis_eigenpair",
    "effective_dimension",
    "eval_kernel",
    "gaussian_kl",
    "gp_posterior",
    "gram_matrix",
    "head_tail_split",
    "nystrom_eigendecomposition",
    "sample_gp",
    "tail_operator_norm",
    "tail_sum",
    "truncated_gp_variance",
    "variance_bounds",
]
