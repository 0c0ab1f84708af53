"""Exception types shared across the library."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ValidationError(ValueError):
    """An argument value is outside its allowed range."""


class UsageError(RuntimeError):
    """An operation was invoked in an unsupported way."""


class FormatError(ValueError):
    """A binary file does not match its expected layout."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class ConfigError(ValueError):
    """A run configuration document is malformed or out of range."""
