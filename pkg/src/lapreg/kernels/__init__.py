"""Backend selection for the hot numeric kernels.

Set ``LAPREG_BACKEND=numpy`` to force the pure-numpy fallback,
``LAPREG_BACKEND=numba`` to require the JIT backend (import error if numba
is missing), or leave it on ``auto`` (default) to use numba when
available. float64 arrays always take the numpy path regardless of the
flag; it is the reference implementation and doubles as the
finite-difference oracle's forward evaluator.

Both backends share the same function signatures; see ``_numpy`` for the
reference semantics of each kernel.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

from . import _numpy

_requested = os.environ.get("LAPREG_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    warnings.warn(f"LAPREG_BACKEND={_requested!r} not recognized, using 'auto'")
    _requested = "auto"

if _requested == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        warnings.warn("numba unavailable, falling back to the numpy backend")
        _impl = _numpy
        BACKEND = "numpy"


def _route(*arrays):
    """Pick the backend by dtype: float64 stays on the numpy reference."""
    if any(a.dtype == np.float64 for a in arrays):
        return _numpy
    return _impl


def conv_fwd(x, w, b, stride, pad):
    return _route(x).conv_fwd(x, w, b, stride, pad)


def conv_bwd_x(g, w, stride, pad, in_spatial):
    return _route(g).conv_bwd_x(g, w, stride, pad, in_spatial)


def conv_bwd_w(x, g, stride, pad, kspatial):
    return _route(x).conv_bwd_w(x, g, stride, pad, kspatial)


def tconv_fwd(x, w, b):
    return _route(x).tconv_fwd(x, w, b)


def tconv_bwd_x(g, w):
    return _route(g).tconv_bwd_x(g, w)


def tconv_bwd_w(x, g, kspatial):
    return _route(x).tconv_bwd_w(x, g, kspatial)


def warp_linear(img, disp):
    return _route(img).warp_linear(img, disp)


def warp_linear_bwd(img, disp, g):
    return _route(img).warp_linear_bwd(img, disp, g)


def warp_nearest(labels, disp):
    # labels are integer-typed; route on the displacement dtype
    return _route(disp).warp_nearest(labels, disp)


def resize_linear(x, out_spatial):
    return _route(x).resize_linear(x, out_spatial)


def resize_linear_bwd(g, in_spatial):
    return _route(g).resize_linear_bwd(g, in_spatial)


def window_sum(x, width):
    return _route(x).window_sum(x, width)
