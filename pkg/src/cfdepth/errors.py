"""Exception types shared across the toolkit."""


class CfDepthError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(CfDepthError):
    """An argument violates a documented precondition."""


class ParseError(CfDepthError):
    """Malformed bytes in a codec. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ShapeError(CfDepthError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(CfDepthError):
    """Invalid model or run configuration."""


class FormatError(CfDepthError):
    """Corrupt or mismatched checkpoint file."""


class DatasetError(CfDepthError):
    """Missing or corrupt file in a dataset directory."""


class PlacementError(CfDepthError):
    """Scene composition could not satisfy the requested constraints."""


class BoundaryError(CfDepthError):
    """A fill region touches the image border."""


class NumericError(CfDepthError):
    """Non-finite value where a finite one is required (training aborts)."""


class InsufficientData(CfDepthError):
    """Too few observations for the requested statistical fit."""
