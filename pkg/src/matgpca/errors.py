"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GPCAError(Exception):
    """Base class for all package errors."""


class DimensionError(GPCAError, ValueError):
    """Shapes or factor counts are inconsistent."""


class SymmetryError(GPCAError, ValueError):
    """A matrix expected to be symmetric is not."""


class NotPositiveDefiniteError(GPCAError, ValueError):
    """A matrix expected to be SPD has a too-small eigenvalue."""

    def __init__(self, lambda_min: float, tolerance: float, what: str = "matrix"):
        self.lambda_min = float(lambda_min)
        self.tolerance = float(tolerance)
        super().__init__(
            f"{what} is not positive definite: lambda_min={lambda_min:.6g} "
            f"<= tolerance {tolerance:.3g}"
        )


class RankError(GPCAError, ValueError):
    """Input columns are numerically linearly dependent."""


class ConfigError(GPCAError, ValueError):
    """Invalid configuration."""


class InsufficientDataError(GPCAError, ValueError):
    """Too few observations for the requested procedure."""


class InvalidCovarianceError(GPCAError, ValueError):
    """Sample covariance has non-positive diagonal entries."""


class DataError(GPCAError, ValueError):
    """Dataset content cannot be preprocessed."""


class ParseError(GPCAError, ValueError):
    """Malformed input file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
