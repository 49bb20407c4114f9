"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A factorization or solve failed even after the jitter fallback."""


class SingularMatrixError(NumericalError):
    """The system matrix is exactly singular (e.g. noiseless duplicated inputs)."""


class CheckpointError(IOError):
    """A model checkpoint is missing, corrupt, or has an unknown format version."""
