"""Exception hierarchy for the invariance-learning toolkit."""

from typing import Optional


class IAEIError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(IAEIError, ValueError):
    """Input data or configuration violates a documented invariant."""


class DimensionMismatch(ValidationError):
    pass


class NoLabels(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class NonPositiveWeight(ValidationError):
    pass


class MissingImputation(ValidationError):
    pass


class OracleNeedsLabels(ValidationError):
    pass


class AllMissing(ValidationError):
    pass


class TooFewRows(ValidationError):
    pass


class MissingModel(ValidationError):
    pass


class InsufficientMonths(ValidationError):
    pass


class ParseError(IAEIError, ValueError):
    """A file or config value could not be parsed."""

    def __init__(
        self, message: str, row: Optional[int] = None, column: Optional[str] = None
    ):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(ParseError):
    """A required column or section is absent."""


class SolverError(IAEIError, RuntimeError):
    """The support search could not produce a minimizer."""


class SingularSystem(SolverError):
    pass


class TooManyCovariates(SolverError):
    pass


class ReportIOError(IAEIError, OSError):
    pass


class DegenerateDesignWarning(UserWarning):
    """OLS design is rank deficient; a minimum-norm solution was used."""
