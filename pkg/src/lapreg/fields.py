"""Dense field conventions and validation.

A field is a channels-first ``numpy.ndarray``: shape ``(C, *spatial)`` with
2 or 3 spatial axes. Intensity images and network activations use float32;
displacement and velocity fields are float32 with one channel per spatial
axis, measured in voxels of their own grid. Label maps use uint16.

Validation happens at external boundaries (file I/O, CLI, public
constructors); internal kernels assume well-formed input.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError

SPATIAL_RANKS = (2, 3)


def as_field(data, name: str = "field") -> np.ndarray:
    """Validate external data as a float32 channels-first field.

    The layout is always (C, *spatial); single-channel volumes therefore
    arrive as (1, H, W) or (1, D, H, W). Rejects non-finite values and
    unsupported ranks.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim - 1 not in SPATIAL_RANKS:
        raise ShapeError(
            f"{name}: expected (C, *spatial) with 2 or 3 spatial axes, got shape {arr.shape}"
        )
    if any(e <= 0 for e in arr.shape):
        raise ShapeError(f"{name}: non-positive extent in shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: contains NaN or Inf")
    return np.ascontiguousarray(arr)


def as_labels(data, name: str = "labels") -> np.ndarray:
    """Validate external data as a uint16 channels-first label field."""
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"{name}: labels must be integer-typed, got {arr.dtype}")
    if arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max:
        raise DataError(f"{name}: labels outside uint16 range")
    arr = arr.astype(np.uint16)
    if arr.ndim - 1 not in SPATIAL_RANKS:
        raise ShapeError(f"{name}: expected (C, *spatial), got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def spatial_shape(arr: np.ndarray) -> tuple[int, ...]:
    return tuple(arr.shape[1:])


def spatial_rank(arr: np.ndarray) -> int:
    return arr.ndim - 1


def check_same_spatial(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"{what}: spatial extents differ, {a.shape[1:]} vs {b.shape[1:]}")


def check_displacement(disp: np.ndarray, like: np.ndarray, what: str = "displacement") -> None:
    """A displacement field must carry one channel per spatial axis of `like`."""
    rank = spatial_rank(like)
    if disp.ndim - 1 != rank or disp.shape[0] != rank:
        raise ShapeError(
            f"{what}: expected ({rank}, *spatial) for rank-{rank} data, got shape {disp.shape}"
        )
    if disp.shape[1:] != like.shape[1:]:
        raise ShapeError(
            f"{what}: spatial extents {disp.shape[1:]} do not match target {like.shape[1:]}"
        )
