"""Image pyramids, warping, and displacement resampling.

All three operations accept either plain float32 arrays or autodiff
Nodes; given a Node they stay on the graph and remain differentiable.
Displacement values are stored in voxels of their own grid, so doubling
the resolution doubles the component values.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ShapeError

MIN_EXTENT = 4


def _is_node(x):
    return isinstance(x, ad.Node)


def build_pyramid(img, levels):
    """Coarse-to-fine list [F_1 .. F_L]; F_L is `img` untouched.

    Each coarser level is one 0.5x linear resampling of the level above
    (extents floor-halved). Requires every extent >= 4 * 2**(levels-1).
    """
    if levels < 1:
        raise ShapeError(f"build_pyramid: levels must be >= 1, got {levels}")
    spatial = (img.value if _is_node(img) else img).shape[1:]
    need = MIN_EXTENT * 2 ** (levels - 1)
    if any(e < need for e in spatial):
        raise ShapeError(
            f"build_pyramid: extents {tuple(spatial)} too small for {levels} levels "
            f"(each must be >= {need})"
        )
    out = [img]
    cur = img
    for _ in range(levels - 1):
        if _is_node(cur):
            cur = ad.resize_linear(cur, 0.5)
        else:
            cur = kernels.resize_linear(cur, tuple(e // 2 for e in cur.shape[1:]))
        out.append(cur)
    out.reverse()
    return out


def warp(img, disp):
    """img sampled at x + disp(x): linear interpolation, border clamp."""
    img_val = img.value if _is_node(img) else img
    disp_val = disp.value if _is_node(disp) else disp
    rank = img_val.ndim - 1
    if disp_val.shape[0] != rank or disp_val.shape[1:] != img_val.shape[1:]:
        raise ShapeError(
            f"warp: displacement shape {disp_val.shape} does not match image "
            f"spatial extents {img_val.shape[1:]}"
        )
    if _is_node(img) or _is_node(disp):
        return ad.grid_sample(ad.as_node(img), ad.as_node(disp))
    return kernels.warp_linear(img_val, disp_val)


def upsample_disp(v):
    """Double a displacement/velocity field's extents and its values."""
    v_val = v.value if _is_node(v) else v
    if v_val.shape[0] != v_val.ndim - 1:
        raise ShapeError(
            f"upsample_disp: expected one channel per spatial axis, got shape {v_val.shape}"
        )
    if _is_node(v):
        return ad.scale(ad.resize_linear(v, 2), 2.0)
    out = kernels.resize_linear(v_val, tuple(e * 2 for e in v_val.shape[1:]))
    out *= np.float32(2.0)
    return out
