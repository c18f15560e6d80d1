"""Exception hierarchy shared across the package."""


class HARError(Exception):
    """Base class for every error raised by twostream_har."""


class DimensionError(HARError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ValidationError(HARError, ValueError):
    """Input values violate an operation's preconditions."""


class ConfigError(HARError, ValueError):
    """A configuration value is out of its allowed range."""


class StateError(HARError, RuntimeError):
    """An object is used before it reached the required state."""


class ModeError(StateError):
    """A layer or network is in the wrong train/eval mode."""


class SynchronizationError(HARError, ValueError):
    """Streams cannot be aligned on a common time grid."""


class ParseError(HARError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class AlignmentError(HARError, ValueError):
    """Per-stream outputs do not describe the same samples."""


class TrainingDivergedError(HARError, RuntimeError):
    """The loss became non-finite during training."""

    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
