"""Exception hierarchy shared across the package.

The CLI maps these onto its stable exit codes: argument problems exit 2,
data problems exit 3, corrupt model files exit 4.
"""

from __future__ import annotations


class FeatureNullError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(FeatureNullError, ValueError):
    """A caller-supplied argument violates an operation's contract."""


class DataError(FeatureNullError):
    """Input data cannot be processed (decode failures, degenerate samples...)."""


class ImageDecodeError(DataError):
    """A file could not be decoded as a raster image."""

    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        msg = f"cannot decode image: {self.path}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class ImageTooSmallError(DataError):
    """Image is too small for the requested operation."""


class PatchOutOfBoundsError(DataError):
    """A descriptor patch does not fit inside the image at any usable position."""


class NoValidPointsError(DataError):
    """No grid point of a probability map could be scored."""


class DegenerateInputError(DataError):
    """A statistic is undefined for the given sample (e.g. zero variance)."""


class StoreFormatError(DataError):
    """A feature-store file is malformed."""


class ModelFormatError(FeatureNullError):
    """A model file is unreadable; subclasses name the failure."""


class ModelMagicError(ModelFormatError):
    """Model file does not start with the expected magic bytes."""


class ModelVersionError(ModelFormatError):
    """Model file version is not supported."""


class ModelTruncatedError(ModelFormatError):
    """Model file ends before all declared payload was read."""
