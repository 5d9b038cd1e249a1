"""Pure-numpy backend.

Reference implementation for every hot kernel. Works for float32 and
float64 (the float64 path backs the finite-difference gradient oracle).
Scatter operations use np.add.at, which applies updates sequentially in
index order, so results are deterministic.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._common import conv_out_spatial, resize_axis_indices, tconv_out_spatial


def _pad_spatial(x, pad):
    if pad == 0:
        return x
    width = ((0, 0),) + ((pad, pad),) * (x.ndim - 1)
    return np.pad(x, width)


# ---------------------------------------------------------------------------
# convolution (channels-first, zero padding, square kernels)
# ---------------------------------------------------------------------------

def conv_fwd(x, w, b, stride, pad):
    ks = w.shape[2:]
    out_sp = conv_out_spatial(x.shape[1:], ks, stride, pad)
    xp = _pad_spatial(x, pad)
    y = np.zeros((w.shape[0],) + out_sp, dtype=x.dtype)
    for koff in itertools.product(*(range(k) for k in ks)):
        sl = tuple(slice(koff[a], koff[a] + stride * out_sp[a], stride) for a in range(len(ks)))
        y += np.tensordot(w[(slice(None), slice(None)) + koff], xp[(slice(None),) + sl], axes=([1], [0]))
    if b is not None:
        y += b.reshape((-1,) + (1,) * len(ks))
    return y


def conv_bwd_x(g, w, stride, pad, in_spatial):
    ks = w.shape[2:]
    out_sp = g.shape[1:]
    gxp = np.zeros((w.shape[1],) + tuple(s + 2 * pad for s in in_spatial), dtype=g.dtype)
    for koff in itertools.product(*(range(k) for k in ks)):
        sl = tuple(slice(koff[a], koff[a] + stride * out_sp[a], stride) for a in range(len(ks)))
        gxp[(slice(None),) + sl] += np.tensordot(
            w[(slice(None), slice(None)) + koff], g, axes=([0], [0])
        )
    crop = tuple(slice(pad, pad + s) for s in in_spatial)
    return np.ascontiguousarray(gxp[(slice(None),) + crop])


def conv_bwd_w(x, g, stride, pad, kspatial):
    out_sp = g.shape[1:]
    xp = _pad_spatial(x, pad)
    rank = len(kspatial)
    sp_axes = list(range(1, rank + 1))
    gw = np.zeros((g.shape[0], x.shape[0]) + tuple(kspatial), dtype=g.dtype)
    for koff in itertools.product(*(range(k) for k in kspatial)):
        sl = tuple(slice(koff[a], koff[a] + stride * out_sp[a], stride) for a in range(rank))
        gw[(slice(None), slice(None)) + koff] = np.tensordot(
            g, xp[(slice(None),) + sl], axes=(sp_axes, sp_axes)
        )
    return gw


# ---------------------------------------------------------------------------
# transpose convolution, stride 2, padding 1 (w laid out as (Cin, Cout, *k))
# ---------------------------------------------------------------------------

def tconv_fwd(x, w, b):
    ks = w.shape[2:]
    in_sp = x.shape[1:]
    pad_sp = tuple((s - 1) * 2 + k for s, k in zip(in_sp, ks))
    yp = np.zeros((w.shape[1],) + pad_sp, dtype=x.dtype)
    for koff in itertools.product(*(range(k) for k in ks)):
        sl = tuple(slice(koff[a], koff[a] + 2 * in_sp[a], 2) for a in range(len(ks)))
        yp[(slice(None),) + sl] += np.tensordot(
            w[(slice(None), slice(None)) + koff], x, axes=([0], [0])
        )
    out_sp = tconv_out_spatial(in_sp, ks)
    crop = tuple(slice(1, 1 + s) for s in out_sp)
    y = np.ascontiguousarray(yp[(slice(None),) + crop])
    if b is not None:
        y += b.reshape((-1,) + (1,) * len(ks))
    return y


def tconv_bwd_x(g, w):
    ks = w.shape[2:]
    gp = _pad_spatial(g, 1)
    in_sp = tuple((s - k + 2) // 2 + 1 for s, k in zip(g.shape[1:], ks))
    gx = np.zeros((w.shape[0],) + in_sp, dtype=g.dtype)
    for koff in itertools.product(*(range(k) for k in ks)):
        sl = tuple(slice(koff[a], koff[a] + 2 * in_sp[a], 2) for a in range(len(ks)))
        gx += np.tensordot(w[(slice(None), slice(None)) + koff], gp[(slice(None),) + sl], axes=([1], [0]))
    return gx


def tconv_bwd_w(x, g, kspatial):
    gp = _pad_spatial(g, 1)
    in_sp = x.shape[1:]
    rank = len(kspatial)
    sp_axes = list(range(1, rank + 1))
    gw = np.zeros((x.shape[0], g.shape[0]) + tuple(kspatial), dtype=g.dtype)
    for koff in itertools.product(*(range(k) for k in kspatial)):
        sl = tuple(slice(koff[a], koff[a] + 2 * in_sp[a], 2) for a in range(rank))
        gw[(slice(None), slice(None)) + koff] = np.tensordot(
            x, gp[(slice(None),) + sl], axes=(sp_axes, sp_axes)
        )
    return gw


# ---------------------------------------------------------------------------
# displacement warping (linear interpolation, border clamp)
# ---------------------------------------------------------------------------

def _sample_setup(spatial, disp):
    """Clamped corner indices, fractions, and interior masks per axis."""
    rank = len(spatial)
    grids = np.meshgrid(*(np.arange(s, dtype=disp.dtype) for s in spatial), indexing="ij")
    i0, frac, interior = [], [], []
    for a in range(rank):
        raw = grids[a] + disp[a]
        interior.append((raw > 0.0) & (raw < spatial[a] - 1.0))
        c = np.clip(raw, 0.0, spatial[a] - 1.0)
        lo = np.minimum(np.floor(c).astype(np.int64), spatial[a] - 2)
        i0.append(lo)
        frac.append(c - lo)
    return i0, frac, interior


def warp_linear(img, disp):
    spatial = img.shape[1:]
    rank = len(spatial)
    i0, frac, _ = _sample_setup(spatial, disp)
    out = np.zeros_like(img)
    for corner in itertools.product((0, 1), repeat=rank):
        wgt = np.ones(spatial, dtype=img.dtype)
        for a in range(rank):
            wgt = wgt * (frac[a] if corner[a] else (1.0 - frac[a]))
        idx = tuple(i0[a] + corner[a] for a in range(rank))
        out += wgt[np.newaxis] * img[(slice(None),) + idx]
    return out


def warp_linear_bwd(img, disp, g):
    spatial = img.shape[1:]
    rank = len(spatial)
    i0, frac, interior = _sample_setup(spatial, disp)
    gimg = np.zeros_like(img)
    gdisp = np.zeros_like(disp)
    for corner in itertools.product((0, 1), repeat=rank):
        wgt = np.ones(spatial, dtype=img.dtype)
        for a in range(rank):
            wgt = wgt * (frac[a] if corner[a] else (1.0 - frac[a]))
        idx = tuple(i0[a] + corner[a] for a in range(rank))
        contrib = g * wgt[np.newaxis]
        for c in range(img.shape[0]):
            np.add.at(gimg[c], idx, contrib[c])
        vals = img[(slice(None),) + idx]
        for a in range(rank):
            partial = np.ones(spatial, dtype=img.dtype)
            for b_ax in range(rank):
                if b_ax == a:
                    continue
                partial = partial * (frac[b_ax] if corner[b_ax] else (1.0 - frac[b_ax]))
            sign = 1.0 if corner[a] else -1.0
            gdisp[a] += sign * np.sum(g * vals, axis=0) * partial
    for a in range(rank):
        gdisp[a] *= interior[a].astype(disp.dtype)
    return gimg, gdisp


def warp_nearest(labels, disp):
    spatial = labels.shape[1:]
    rank = len(spatial)
    grids = np.meshgrid(*(np.arange(s, dtype=disp.dtype) for s in spatial), indexing="ij")
    idx = []
    for a in range(rank):
        c = np.clip(grids[a] + disp[a], 0.0, spatial[a] - 1.0)
        idx.append(np.floor(c + 0.5).astype(np.int64))
    return np.ascontiguousarray(labels[(slice(None),) + tuple(idx)])


# ---------------------------------------------------------------------------
# linear resize (align-corners-false), axis-separable
# ---------------------------------------------------------------------------

def resize_linear(x, out_spatial):
    y = x
    for a, out_len in enumerate(out_spatial):
        axis = 1 + a
        if y.shape[axis] == out_len:
            continue
        i0, frac = resize_axis_indices(y.shape[axis], out_len, x.dtype)
        shape = [1] * y.ndim
        shape[axis] = out_len
        f = frac.reshape(shape)
        y0 = np.take(y, i0, axis=axis)
        y1 = np.take(y, i0 + 1, axis=axis)
        y = y0 * (1.0 - f) + y1 * f
    return np.ascontiguousarray(y)


def resize_linear_bwd(g, in_spatial):
    gx = g
    for a in reversed(range(len(in_spatial))):
        axis = 1 + a
        in_len = in_spatial[a]
        if gx.shape[axis] == in_len:
            continue
        i0, frac = resize_axis_indices(in_len, gx.shape[axis], g.dtype)
        moved = np.moveaxis(gx, axis, -1)
        acc_shape = moved.shape[:-1] + (in_len,)
        acc = np.zeros(acc_shape, dtype=g.dtype)
        np.add.at(acc, (Ellipsis, i0), moved * (1.0 - frac))
        np.add.at(acc, (Ellipsis, i0 + 1), moved * frac)
        gx = np.moveaxis(acc, -1, axis)
    return np.ascontiguousarray(gx)


# ---------------------------------------------------------------------------
# centered window sums with zero padding (self-adjoint)
# ---------------------------------------------------------------------------

def window_sum(x, width):
    r = width // 2
    y = x
    for a in range(1, x.ndim):
        pad = [(0, 0)] * x.ndim
        pad[a] = (r, r)
        yp = np.pad(y, pad)
        y = sliding_window_view(yp, width, axis=a).sum(axis=-1, dtype=x.dtype)
    return np.ascontiguousarray(y)
