"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class PromptBoundsError(ValueError):
    """A point prompt lies outside the volume bounds."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared at an operation boundary."""


class UsageError(RuntimeError):
    """An API was called in an unsupported way."""


class VolumeFormatError(ValueError):
    """A .vol container is malformed, truncated, or of unknown version."""


class GenerationError(RuntimeError):
    """Synthetic volume generation could not satisfy its constraints."""


class CheckpointError(RuntimeError):
    """A checkpoint is unreadable or incompatible with the config."""


class TrainingError(RuntimeError):
    """Training aborted (e.g. non-finite loss)."""
