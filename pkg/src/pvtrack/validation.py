"""Input checks applied at every public entry point that accepts rasters."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def _as_byte_raster(X, name):
    arr = np.asarray(X)
    if arr.dtype == np.uint8:
        return arr
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    if arr.size and (np.nanmin(arr) < 0 or np.nanmax(arr) > 255 or not np.isfinite(arr).all()):
        raise ValueError(f"{name} values must lie in [0, 255]")
    return np.rint(arr).astype(np.uint8)


def check_thermal_image(X) -> np.ndarray:
    """Return ``X`` as a 2-D uint8 raster (a single-channel thermal frame)."""
    arr = _as_byte_raster(X, "thermal image")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise ValueError(f"thermal image must be 2-D, got shape {arr.shape}")
    if 0 in arr.shape:
        raise ValueError("thermal image is empty")
    return arr


def check_rgb_image(X) -> np.ndarray:
    arr = _as_byte_raster(X, "RGB image")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"RGB image must have shape (H, W, 3), got {arr.shape}")
    if 0 in arr.shape[:2]:
        raise ValueError("RGB image is empty")
    return arr


def check_mask(X) -> np.ndarray:
    arr = np.asarray(X)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    return (arr != 0).astype(np.uint8)


def check_same_raster(a, b):
    """Raise :class:`ShapeMismatch` unless both rasters share height and width."""
    if np.shape(a)[:2] != np.shape(b)[:2]:
        raise ShapeMismatch(f"raster shapes differ: {np.shape(a)[:2]} vs {np.shape(b)[:2]}")


def check_matches_geometry(X, geometry):
    if geometry is not None and np.shape(X)[:2] != (geometry.height, geometry.width):
        raise ShapeMismatch(
            f"image is {np.shape(X)[1]}x{np.shape(X)[0]} but geometry expects {geometry.width}x{geometry.height}"
        )
