"""Exception hierarchy shared across the package."""


class ScalefitError(Exception):
    """Base class for all library errors."""


class DomainError(ScalefitError, ValueError):
    """An input is outside the mathematical domain of an operation."""


class UnsupportedVariantError(ScalefitError, ValueError):
    """The requested operation is undefined for this law family."""


class InvalidGridError(ScalefitError, ValueError):
    """A size/ratio/token grid is empty, nonpositive, or not sorted."""


class EmptyTrainError(ScalefitError, ValueError):
    """A holdout split left no training observations behind."""


class SingularSystemError(ScalefitError, ArithmeticError):
    """The damped normal equations stayed rank-deficient at the damping ceiling."""


class NotSingleRayError(ScalefitError, ValueError):
    """The operation requires every training run to share one tokens-per-parameter ratio."""


class DegenerateDesignError(ScalefitError, ValueError):
    """The design carries too few distinct points to identify the model."""


class NonSymmetricInputError(ScalefitError, ValueError):
    """A symmetric-matrix routine received a non-symmetric input."""


class EmptyRatioError(ScalefitError, ValueError):
    """A ratio list was empty where at least one ratio is required."""


class InfeasibleDesignError(ScalefitError, ValueError):
    """No design in the requested range can meet the conditioning target."""


class InsufficientGridError(ScalefitError, ValueError):
    """The candidate grid holds fewer cells than the requested design size."""


class EmptySplitError(ScalefitError, ValueError):
    """The selected evaluation split contains no observations."""


class PoolTooLargeError(ScalefitError, ValueError):
    """The ratio pool exceeds the enumerable subset limit."""


class UnsupportedDesignError(ScalefitError, ValueError):
    """The analytic prediction is only defined for single-ray designs."""


class DatasetFormatError(ScalefitError, ValueError):
    """A dataset file violates the CSV schema.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UsageError(ScalefitError, ValueError):
    """Bad command-line arguments."""
