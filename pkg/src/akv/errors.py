"""Exception types raised across the package."""


class AKVError(Exception):
    """Base class for all errors raised by akv."""


class ShapeError(AKVError, ValueError):
    pass


class ValidationError(AKVError, ValueError):
    pass


class StructureError(ValidationError):
    """An almost Hermitian axiom is violated.

    ``residual`` names the failed check and ``point`` is the chart point
    where it was detected.
    """

    def __init__(self, message, residual=None, point=None, value=None):
        super().__init__(message)
        self.residual = residual
        self.point = point
        self.value = value


class ManifestError(AKVError, ValueError):
    """Manifest text could not be parsed. Carries a 1-based line/column."""

    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class UnsupportedDomainError(AKVError):
    """Quadrature requested on a chart without a periodic fundamental domain."""


class ChartDomainError(AKVError, ValueError):
    """Evaluation point outside the validity region of a chart."""
