"""Exception hierarchy shared across the package."""


class EtsforeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EtsforeError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(EtsforeError):
    """A configuration value is missing, unknown, or out of range."""


class DomainError(EtsforeError):
    """A numeric argument lies outside its mathematical domain."""


class DataError(EtsforeError):
    """Input data is malformed, too short, or otherwise unusable."""


class ParseError(DataError):
    """A file could not be parsed; message carries the offending line."""


class EvaluationError(EtsforeError):
    """A function evaluation produced a non-finite result."""


class TrainingError(EtsforeError):
    """Optimization failed; message carries epoch/batch/parameter context."""
