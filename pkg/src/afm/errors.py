"""Exception hierarchy shared across the package."""


class AfmError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AfmError, ValueError):
    """Operand shapes are incompatible with an operation."""


class TapeError(AfmError, RuntimeError):
    """Misuse of the recording tape (non-scalar loss, double backward, stale grads)."""


class MissingGradientError(AfmError, RuntimeError):
    """An optimizer step found a registered parameter without a gradient."""


class ConfigError(AfmError, ValueError):
    """Invalid hyperparameters or malformed configuration file."""


class StageError(AfmError, ValueError):
    """A feature matrix carries the wrong processing stage for an operation."""


class FormatError(AfmError, ValueError):
    """A binary file does not follow the expected on-disk layout."""


class DataError(AfmError, ValueError):
    """Input data violates a precondition (labels out of range, short audio, ...)."""
