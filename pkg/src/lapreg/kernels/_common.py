"""Geometry helpers shared by the numba and numpy backends."""

from __future__ import annotations

import numpy as np


def conv_out_spatial(in_spatial, kspatial, stride: int, pad: int) -> tuple[int, ...]:
    return tuple((s + 2 * pad - k) // stride + 1 for s, k in zip(in_spatial, kspatial))


def tconv_out_spatial(in_spatial, kspatial) -> tuple[int, ...]:
    # stride 2, padding 1
    return tuple((s - 1) * 2 - 2 + k for s, k in zip(in_spatial, kspatial))


def resize_axis_indices(in_len: int, out_len: int, dtype):
    """Source index/fraction pairs for align-corners-false linear resampling.

    Output cell centers map to input coordinate (i + 0.5) * in/out - 0.5,
    clamped to the valid range; i0 is clamped to in_len - 2 so i0 + 1 stays
    in bounds and the fraction absorbs the boundary.
    """
    if in_len < 2:
        raise ValueError(f"resize needs extent >= 2, got {in_len}")
    scale = in_len / out_len
    coords = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, in_len - 1.0)
    i0 = np.minimum(np.floor(coords).astype(np.int64), in_len - 2)
    frac = (coords - i0).astype(dtype)
    return i0, frac
