"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value cannot be satisfied."""


class UsageError(RuntimeError):
    """An API was called outside its contract."""
