"""Exception types shared across the package."""


class LatentReplayError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ShapeError(LatentReplayError):
    """Tensor dimensions do not match what an operation requires."""

    category = "shape"


class ConfigError(LatentReplayError):
    """A configuration value is invalid or inconsistent with another."""

    category = "config"


class DataError(LatentReplayError):
    """Input data is malformed, empty, or out of range."""

    category = "data"


class ContractError(LatentReplayError):
    """A caller violated a state contract (e.g. touched frozen parameters)."""

    category = "contract"


class CheckpointError(LatentReplayError):
    """A checkpoint file is corrupt, truncated, or of an unknown version."""

    category = "checkpoint"
