"""Exception types shared across the package."""


class StvcError(Exception):
    """Base class for all package errors."""


class ConfigError(StvcError, ValueError):
    """Invalid configuration, grid, schema or input data."""


class ParameterError(StvcError, ValueError):
    """Distribution parameters outside their admissible region."""


class DomainError(StvcError, ValueError):
    """Argument outside the support of a density."""


class NumericalError(StvcError, ArithmeticError):
    """A numerical routine failed (non-positive pivot, non-finite objective)."""


class FactorizationError(NumericalError):
    """Cholesky factorization hit a non-positive pivot.

    Attributes
    ----------
    pivot : int or None
        Zero-based index of the failing pivot, when known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot
