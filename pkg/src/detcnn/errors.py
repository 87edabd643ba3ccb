"""Exception types shared across the engine.

Every error raised on a documented failure path is one of these, so callers
(and the CLI exit-code mapping) can dispatch on type instead of message text.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


class ShapeError(EngineError):
    """Tensor rank/dimension mismatch, including invalid broadcasts."""


class ConfigError(EngineError):
    """Invalid hyperparameter, seed, or CLI/env configuration value."""


class DataError(EngineError):
    """Unreadable or malformed input data (images, datasets, run dirs)."""


class NumericAbort(EngineError):
    """Non-finite loss encountered during training.

    Carries the first offending location so a diverged run is diagnosable.
    """

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch}"
        )


class WeightFormatError(DataError):
    """Base for weight-container parse failures."""


class BadMagic(WeightFormatError):
    """File does not start with the container magic."""


class BadVersion(WeightFormatError):
    """Container version not supported by this engine."""


class Truncated(WeightFormatError):
    """File ends before the declared payload does."""


class ChecksumMismatch(WeightFormatError):
    """Trailing digest does not match the file contents."""


class TensorMismatch(WeightFormatError):
    """Stored tensors do not match the model's parameter registry."""
