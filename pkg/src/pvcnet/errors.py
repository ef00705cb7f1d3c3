"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Values are outside the mathematical domain of the operation."""


class ConfigError(ValueError):
    """A configuration value is invalid (bad grid resolution, even kernel, ...)."""


class FormatError(ValueError):
    """A file does not conform to its declared binary/CSV layout."""


class TrainingError(RuntimeError):
    """Training cannot proceed (non-finite gradients or loss)."""
