"""
Error Hierarchy
Every failure the CLI can report maps to one exit code
"""

from typing import Optional


class BloomError(Exception):
    """Base error for the package."""
    exit_code: int = 1


class InvalidArgumentError(BloomError, ValueError):
    """A caller passed arguments violating an operation's preconditions."""
    exit_code = 1


class AlignmentFailedError(BloomError):
    """Depth alignment had too little overlap to solve for scale and shift."""
    exit_code = 4

    def __init__(self, message: str, overlap_count: int):
        super().__init__(message)
        self.overlap_count = overlap_count


# Configuration

class ConfigError(BloomError):
    """Run configuration could not be loaded or validated."""
    exit_code = 2


# Frame providers

class ProviderError(BloomError):
    """Base frame provider error."""
    exit_code = 3


class UnknownSceneError(ProviderError):
    """Synthetic scene id is not registered."""
    pass


class ProviderTimeoutError(ProviderError):
    """No response appeared before the poll timeout."""
    pass


class MalformedResponseError(ProviderError):
    """A response file exists but cannot be decoded."""
    pass


class MaskPreservationError(ProviderError):
    """A completed image altered pixels the mask marks as covered."""

    def __init__(self, message: str, changed_pixels: int, max_difference: float):
        super().__init__(message)
        self.changed_pixels = changed_pixels
        self.max_difference = max_difference


# Numerics

class NumericError(BloomError):
    """A loss or gradient became non-finite."""
    exit_code = 4


class NonFiniteLossError(NumericError):
    """Training loss is NaN or infinite."""

    def __init__(self, message: str, iteration: int, checkpoint: Optional[str] = None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint


class NonFiniteGradientError(NumericError):
    """A parameter group received a NaN gradient."""

    def __init__(self, message: str, group: str, checkpoint: Optional[str] = None):
        super().__init__(message)
        self.group = group
        self.checkpoint = checkpoint


# File formats

class FormatError(BloomError):
    """Base file format error."""
    exit_code = 5


class BitstreamMagicError(FormatError):
    """Bitstream does not start with the expected magic bytes."""
    pass


class BitstreamVersionError(FormatError):
    """Bitstream version is not supported by this decoder."""
    pass


class TruncatedPayloadError(FormatError):
    """Bitstream ended before a declared field was complete."""
    pass


class SymbolOutOfRangeError(FormatError):
    """A symbol fell outside the coder's alphabet."""
    pass


class StateFileError(FormatError):
    """A checkpoint, cloud or image file is missing or unreadable."""
    pass


class GenerationError(BloomError):
    """Progressive generation aborted at a specific camera."""

    def __init__(self, camera_index: int, cause: BaseException):
        super().__init__(f"Generation failed at camera {camera_index}: {cause}")
        self.camera_index = camera_index
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
