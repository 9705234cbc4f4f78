"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A shape, variant or configuration value is inconsistent."""


class UsageError(RuntimeError):
    """An API was called in an unsupported way (wrong tape, reused tape, ...)."""


class DataFormatError(ValueError):
    """An input file violates the canonical format."""


class TrainingDiverged(RuntimeError):
    """The training loss became NaN/Inf."""
