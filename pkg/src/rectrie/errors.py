"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RIEError(Exception):
    """Base class for all errors raised by rectrie."""


class DimensionError(RIEError, ValueError):
    """Matrix shapes are empty, mismatched or not canonical."""


class NumericInputError(RIEError, ValueError):
    """Input contains NaN or infinite entries."""


class DomainError(RIEError, ValueError):
    """Argument lies outside the domain of a transform."""


class SingularityError(DomainError):
    """Evaluation point hits a pole of a transform."""


class RangeError(RIEError, ValueError):
    """Target value lies outside the attainable image of a map.

    ``interval`` carries the attainable ``(low, high)`` range.
    """

    def __init__(self, message: str, interval: tuple[float, float]):
        super().__init__(message)
        self.interval = interval


class ConvergenceError(RIEError, RuntimeError):
    """A numeric root search or limit did not converge.

    ``bracket`` carries the last bracket state when available.
    """

    def __init__(self, message: str, bracket: tuple | None = None):
        super().__init__(message)
        self.bracket = bracket


class UnsupportedFamilyError(RIEError, ValueError):
    """Requested transform is not available for this noise family."""


class PreconditionError(RIEError, ValueError):
    """Caller violated a documented precondition."""


class CoverageError(RIEError, ValueError):
    """Quadrature grid does not cover enough probability mass."""


class InsufficientSamplesError(RIEError, ValueError):
    """Too few Monte-Carlo samples for the requested statistic."""


class ConfigError(RIEError, ValueError):
    """Experiment configuration failed validation.

    ``problems`` lists ``(field_path, message)`` pairs.
    """

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.problems)
        super().__init__(f"invalid configuration: {lines}")


class SchemaError(RIEError, ValueError):
    """A results file does not match the expected column schema."""


class ConvergenceWarning(RuntimeWarning):
    """Limit extrapolation drifted more than the requested tolerance."""


class IntegrabilityWarning(RuntimeWarning):
    """An integrand looks non-integrable on the numeric grid."""
