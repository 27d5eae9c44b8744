"""Exception types shared across the package."""


class GeoError(Exception):
    """Base class for all package errors."""


class ValidationError(GeoError):
    """A value violates a documented invariant."""


class ConfigurationError(GeoError):
    """A config file or config object is malformed or inconsistent."""


class ParseError(GeoError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ContractViolation(GeoError):
    """Caller passed arguments that break an operation's precondition."""


class GenerationError(GeoError):
    """The synthetic generator cannot satisfy the requested configuration."""


class NumericError(GeoError):
    """A non-finite value surfaced where finite arithmetic was required."""


class MetricError(GeoError):
    """A metric is undefined for the given inputs (e.g. all-zero grades)."""
