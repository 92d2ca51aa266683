"""Exception types raised by collprob."""


class CollprobError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(CollprobError, ValueError):
    pass


class DegenerateCovarianceError(CollprobError, ValueError):
    """Raised when a covariance is not (numerically) positive definite.

    ``direction`` holds the eigenvector of the smallest eigenvalue when known.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class NumericDomainError(CollprobError, ArithmeticError):
    pass


class GridMismatchError(InvalidArgumentError):
    pass


class SchemaError(CollprobError, ValueError):
    """Invalid scenario or batch file. ``location`` is a JSON path or line/column."""

    def __init__(self, message, location=None):
        full = f"{location}: {message}" if location else message
        super().__init__(full)
        self.location = location
