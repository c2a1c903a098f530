"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class ConfigError(ValueError):
    """A layer, model or run configuration is invalid."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class FormatError(ValueError):
    """An on-disk file does not match its declared layout."""


class UsageError(RuntimeError):
    """An API was called in an invalid state (e.g. backward twice)."""


class NumericError(ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""
