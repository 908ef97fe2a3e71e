"""Input validation helpers used at the public API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError

N_GROUPS = 16          # reduced-vector components
GROUP_BITS = 16        # descriptor bits per component
N_BITS = N_GROUPS * GROUP_BITS
N_CATEGORIES = GROUP_BITS + 1   # popcount of a 16-bit group is 0..16
DESCRIPTOR_BYTES = N_BITS // 8


def check_gray_image(img, name: str = "img") -> np.ndarray:
    """Coerce to a 2-D uint8 array; reject color or non-integer inputs."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a 2-D grayscale array, got ndim={arr.ndim}")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise InvalidArgumentError(f"{name} must hold 8-bit integers, got dtype={arr.dtype}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise InvalidArgumentError(f"{name} values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def check_descriptors(d, name: str = "descriptors") -> np.ndarray:
    """Coerce to an (n, 32) uint8 array of packed 256-bit descriptors."""
    arr = np.asarray(d, dtype=np.uint8)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != DESCRIPTOR_BYTES:
        raise InvalidArgumentError(
            f"{name} must have {DESCRIPTOR_BYTES} bytes per row, got shape {arr.shape}")
    return arr


def check_reduced(x, name: str = "x") -> np.ndarray:
    """Coerce to an (n, 16) array of integer components in [0, 16]."""
    arr = np.asarray(x)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != N_GROUPS:
        raise InvalidArgumentError(
            f"{name} must have {N_GROUPS} components per row, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if arr.size and not np.array_equal(as_int, arr):
            raise InvalidArgumentError(f"{name} components must be integers")
        arr = as_int
    if arr.size and (arr.min() < 0 or arr.max() > GROUP_BITS):
        raise InvalidArgumentError(f"{name} components must lie in [0, {GROUP_BITS}]")
    return arr.astype(np.uint8)


def check_fraction(fraction: float, name: str = "fraction") -> float:
    """Require a real in (0, 1]."""
    f = float(fraction)
    if not (0.0 < f <= 1.0):
        raise InvalidArgumentError(f"{name} must lie in (0, 1], got {fraction}")
    return f


def check_positive_int(value, name: str) -> int:
    v = int(value)
    if v < 1:
        raise InvalidArgumentError(f"{name} must be >= 1, got {value}")
    return v
