class PGCRError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(PGCRError, ValueError):
    """Tensor or image dimensions do not agree."""


class DataError(PGCRError):
    """Dataset layout or image content is invalid."""


class ConfigError(PGCRError, ValueError):
    """Run configuration is malformed or contains unknown keys."""


class CheckpointError(PGCRError):
    """Checkpoint bytes cannot be decoded or do not match the expected model."""


class MissingGradientError(PGCRError, RuntimeError):
    """An optimizer step was requested for a parameter with no gradient."""

