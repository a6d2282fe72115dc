"""Exception hierarchy.

Every error raised on purpose by this package derives from GpunetError so
callers can catch one type at the boundary (the CLI maps them to exit codes).
"""


class GpunetError(Exception):
    """Base class for all errors raised by gpunet."""


class SpecError(GpunetError, ValueError):
    """A layer or model specification is invalid (bad shapes, odd padding...)."""


class ShapeError(GpunetError, ValueError):
    """An input tensor does not match the shape a spec or op requires."""


class NonFiniteError(GpunetError, ArithmeticError):
    """A primitive produced NaN or Inf."""


class DivergenceError(GpunetError, RuntimeError):
    """Training loss became non-finite or exploded past the abort threshold."""


class CheckpointError(GpunetError, ValueError):
    """A checkpoint file is malformed or inconsistent with the model."""


class CheckpointMagicError(CheckpointError):
    """The file does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint declares a format version this build cannot read."""


class CheckpointTruncatedError(CheckpointError):
    """The checkpoint ends before all declared tensors."""


class ImageFormatError(GpunetError, ValueError):
    """A PGM/PPM file could not be decoded."""


class BadMagicError(ImageFormatError):
    """The file does not start with a supported netpbm magic number."""


class UnsupportedMaxvalError(ImageFormatError):
    """The image declares a maxval other than 255."""


class TruncatedImageError(ImageFormatError):
    """The pixel payload ends before width*height samples."""


class DatasetError(GpunetError, ValueError):
    """A dataset directory or split specification is invalid."""
