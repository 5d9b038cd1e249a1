"""Numba backend: single-threaded @njit loops for the gather/scatter
kernels (warping, resampling, window sums) where explicit loops beat
vectorized numpy by an order of magnitude.

Convolutions are the exception: BLAS-backed tensordot in the numpy module
outruns naive JIT loops severalfold, so both backends share that
implementation (see benchmarks/bench_kernels.py).

Kernels are compiled with cache=True so repeat runs skip JIT cost. No
parallel sections and no fastmath: accumulation order is fixed, which
keeps reruns bit-identical.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._common import resize_axis_indices
from ._numpy import (  # noqa: F401  (shared BLAS-path convolutions)
    conv_fwd,
    conv_bwd_x,
    conv_bwd_w,
    tconv_fwd,
    tconv_bwd_x,
    tconv_bwd_w,
)

F32 = np.float32


# ---------------------------------------------------------------------------
# displacement warping
# ---------------------------------------------------------------------------

@njit(cache=True)
def _warp2d(img, disp):
    c, h, w = img.shape
    out = np.empty_like(img)
    for yy in range(h):
        for xx in range(w):
            sy = F32(yy) + disp[0, yy, xx]
            sx = F32(xx) + disp[1, yy, xx]
            if sy < 0.0:
                sy = F32(0.0)
            elif sy > h - 1:
                sy = F32(h - 1)
            if sx < 0.0:
                sx = F32(0.0)
            elif sx > w - 1:
                sx = F32(w - 1)
            i0 = int(sy)
            if i0 > h - 2:
                i0 = h - 2
            j0 = int(sx)
            if j0 > w - 2:
                j0 = w - 2
            fy = sy - i0
            fx = sx - j0
            for ch in range(c):
                v0 = img[ch, i0, j0] * (F32(1.0) - fx) + img[ch, i0, j0 + 1] * fx
                v1 = img[ch, i0 + 1, j0] * (F32(1.0) - fx) + img[ch, i0 + 1, j0 + 1] * fx
                out[ch, yy, xx] = v0 * (F32(1.0) - fy) + v1 * fy
    return out


@njit(cache=True)
def _warp3d(img, disp):
    c, d, h, w = img.shape
    out = np.empty_like(img)
    for zz in range(d):
        for yy in range(h):
            for xx in range(w):
                sz = F32(zz) + disp[0, zz, yy, xx]
                sy = F32(yy) + disp[1, zz, yy, xx]
                sx = F32(xx) + disp[2, zz, yy, xx]
                if sz < 0.0:
                    sz = F32(0.0)
                elif sz > d - 1:
                    sz = F32(d - 1)
                if sy < 0.0:
                    sy = F32(0.0)
                elif sy > h - 1:
                    sy = F32(h - 1)
                if sx < 0.0:
                    sx = F32(0.0)
                elif sx > w - 1:
                    sx = F32(w - 1)
                k0 = int(sz)
                if k0 > d - 2:
                    k0 = d - 2
                i0 = int(sy)
                if i0 > h - 2:
                    i0 = h - 2
                j0 = int(sx)
                if j0 > w - 2:
                    j0 = w - 2
                fz = sz - k0
                fy = sy - i0
                fx = sx - j0
                for ch in range(c):
                    c00 = img[ch, k0, i0, j0] * (F32(1.0) - fx) + img[ch, k0, i0, j0 + 1] * fx
                    c01 = img[ch, k0, i0 + 1, j0] * (F32(1.0) - fx) + img[ch, k0, i0 + 1, j0 + 1] * fx
                    c10 = img[ch, k0 + 1, i0, j0] * (F32(1.0) - fx) + img[ch, k0 + 1, i0, j0 + 1] * fx
                    c11 = img[ch, k0 + 1, i0 + 1, j0] * (F32(1.0) - fx) + img[ch, k0 + 1, i0 + 1, j0 + 1] * fx
                    e0 = c00 * (F32(1.0) - fy) + c01 * fy
                    e1 = c10 * (F32(1.0) - fy) + c11 * fy
                    out[ch, zz, yy, xx] = e0 * (F32(1.0) - fz) + e1 * fz
    return out


@njit(cache=True)
def _warp2d_bwd(img, disp, g):
    c, h, w = img.shape
    gimg = np.zeros_like(img)
    gdisp = np.zeros_like(disp)
    for yy in range(h):
        for xx in range(w):
            ry = F32(yy) + disp[0, yy, xx]
            rx = F32(xx) + disp[1, yy, xx]
            iny = ry > 0.0 and ry < h - 1
            inx = rx > 0.0 and rx < w - 1
            sy = ry
            sx = rx
            if sy < 0.0:
                sy = F32(0.0)
            elif sy > h - 1:
                sy = F32(h - 1)
            if sx < 0.0:
                sx = F32(0.0)
            elif sx > w - 1:
                sx = F32(w - 1)
            i0 = int(sy)
            if i0 > h - 2:
                i0 = h - 2
            j0 = int(sx)
            if j0 > w - 2:
                j0 = w - 2
            fy = sy - i0
            fx = sx - j0
            gy = F32(0.0)
            gx = F32(0.0)
            for ch in range(c):
                gv = g[ch, yy, xx]
                gimg[ch, i0, j0] += gv * (F32(1.0) - fy) * (F32(1.0) - fx)
                gimg[ch, i0, j0 + 1] += gv * (F32(1.0) - fy) * fx
                gimg[ch, i0 + 1, j0] += gv * fy * (F32(1.0) - fx)
                gimg[ch, i0 + 1, j0 + 1] += gv * fy * fx
                dy = (img[ch, i0 + 1, j0] - img[ch, i0, j0]) * (F32(1.0) - fx) + (
                    img[ch, i0 + 1, j0 + 1] - img[ch, i0, j0 + 1]
                ) * fx
                dx = (img[ch, i0, j0 + 1] - img[ch, i0, j0]) * (F32(1.0) - fy) + (
                    img[ch, i0 + 1, j0 + 1] - img[ch, i0 + 1, j0]
                ) * fy
                gy += gv * dy
                gx += gv * dx
            if iny:
                gdisp[0, yy, xx] = gy
            if inx:
                gdisp[1, yy, xx] = gx
    return gimg, gdisp


@njit(cache=True)
def _warp3d_bwd(img, disp, g):
    c, d, h, w = img.shape
    gimg = np.zeros_like(img)
    gdisp = np.zeros_like(disp)
    for zz in range(d):
        for yy in range(h):
            for xx in range(w):
                rz = F32(zz) + disp[0, zz, yy, xx]
                ry = F32(yy) + disp[1, zz, yy, xx]
                rx = F32(xx) + disp[2, zz, yy, xx]
                inz = rz > 0.0 and rz < d - 1
                iny = ry > 0.0 and ry < h - 1
                inx = rx > 0.0 and rx < w - 1
                sz = rz
                sy = ry
                sx = rx
                if sz < 0.0:
                    sz = F32(0.0)
                elif sz > d - 1:
                    sz = F32(d - 1)
                if sy < 0.0:
                    sy = F32(0.0)
                elif sy > h - 1:
                    sy = F32(h - 1)
                if sx < 0.0:
                    sx = F32(0.0)
                elif sx > w - 1:
                    sx = F32(w - 1)
                k0 = int(sz)
                if k0 > d - 2:
                    k0 = d - 2
                i0 = int(sy)
                if i0 > h - 2:
                    i0 = h - 2
                j0 = int(sx)
                if j0 > w - 2:
                    j0 = w - 2
                fz = sz - k0
                fy = sy - i0
                fx = sx - j0
                gz = F32(0.0)
                gy = F32(0.0)
                gx = F32(0.0)
                for ch in range(c):
                    gv = g[ch, zz, yy, xx]
                    wz0 = F32(1.0) - fz
                    wy0 = F32(1.0) - fy
                    wx0 = F32(1.0) - fx
                    gimg[ch, k0, i0, j0] += gv * wz0 * wy0 * wx0
                    gimg[ch, k0, i0, j0 + 1] += gv * wz0 * wy0 * fx
                    gimg[ch, k0, i0 + 1, j0] += gv * wz0 * fy * wx0
                    gimg[ch, k0, i0 + 1, j0 + 1] += gv * wz0 * fy * fx
                    gimg[ch, k0 + 1, i0, j0] += gv * fz * wy0 * wx0
                    gimg[ch, k0 + 1, i0, j0 + 1] += gv * fz * wy0 * fx
                    gimg[ch, k0 + 1, i0 + 1, j0] += gv * fz * fy * wx0
                    gimg[ch, k0 + 1, i0 + 1, j0 + 1] += gv * fz * fy * fx
                    # interpolated differences along each axis
                    dz = (
                        (img[ch, k0 + 1, i0, j0] - img[ch, k0, i0, j0]) * wy0 * wx0
                        + (img[ch, k0 + 1, i0, j0 + 1] - img[ch, k0, i0, j0 + 1]) * wy0 * fx
                        + (img[ch, k0 + 1, i0 + 1, j0] - img[ch, k0, i0 + 1, j0]) * fy * wx0
                        + (img[ch, k0 + 1, i0 + 1, j0 + 1] - img[ch, k0, i0 + 1, j0 + 1]) * fy * fx
                    )
                    dy = (
                        (img[ch, k0, i0 + 1, j0] - img[ch, k0, i0, j0]) * wz0 * wx0
                        + (img[ch, k0, i0 + 1, j0 + 1] - img[ch, k0, i0, j0 + 1]) * wz0 * fx
                        + (img[ch, k0 + 1, i0 + 1, j0] - img[ch, k0 + 1, i0, j0]) * fz * wx0
                        + (img[ch, k0 + 1, i0 + 1, j0 + 1] - img[ch, k0 + 1, i0, j0 + 1]) * fz * fx
                    )
                    dx = (
                        (img[ch, k0, i0, j0 + 1] - img[ch, k0, i0, j0]) * wz0 * wy0
                        + (img[ch, k0, i0 + 1, j0 + 1] - img[ch, k0, i0 + 1, j0]) * wz0 * fy
                        + (img[ch, k0 + 1, i0, j0 + 1] - img[ch, k0 + 1, i0, j0]) * fz * wy0
                        + (img[ch, k0 + 1, i0 + 1, j0 + 1] - img[ch, k0 + 1, i0 + 1, j0]) * fz * fy
                    )
                    gz += gv * dz
                    gy += gv * dy
                    gx += gv * dx
                if inz:
                    gdisp[0, zz, yy, xx] = gz
                if iny:
                    gdisp[1, zz, yy, xx] = gy
                if inx:
                    gdisp[2, zz, yy, xx] = gx
    return gimg, gdisp


@njit(cache=True)
def _warp2d_nearest(labels, disp):
    c, h, w = labels.shape
    out = np.empty_like(labels)
    for yy in range(h):
        for xx in range(w):
            sy = F32(yy) + disp[0, yy, xx]
            sx = F32(xx) + disp[1, yy, xx]
            if sy < 0.0:
                sy = F32(0.0)
            elif sy > h - 1:
                sy = F32(h - 1)
            if sx < 0.0:
                sx = F32(0.0)
            elif sx > w - 1:
                sx = F32(w - 1)
            iy = int(sy + F32(0.5))
            ix = int(sx + F32(0.5))
            if iy > h - 1:
                iy = h - 1
            if ix > w - 1:
                ix = w - 1
            for ch in range(c):
                out[ch, yy, xx] = labels[ch, iy, ix]
    return out


@njit(cache=True)
def _warp3d_nearest(labels, disp):
    c, d, h, w = labels.shape
    out = np.empty_like(labels)
    for zz in range(d):
        for yy in range(h):
            for xx in range(w):
                sz = F32(zz) + disp[0, zz, yy, xx]
                sy = F32(yy) + disp[1, zz, yy, xx]
                sx = F32(xx) + disp[2, zz, yy, xx]
                if sz < 0.0:
                    sz = F32(0.0)
                elif sz > d - 1:
                    sz = F32(d - 1)
                if sy < 0.0:
                    sy = F32(0.0)
                elif sy > h - 1:
                    sy = F32(h - 1)
                if sx < 0.0:
                    sx = F32(0.0)
                elif sx > w - 1:
                    sx = F32(w - 1)
                iz = int(sz + F32(0.5))
                iy = int(sy + F32(0.5))
                ix = int(sx + F32(0.5))
                if iz > d - 1:
                    iz = d - 1
                if iy > h - 1:
                    iy = h - 1
                if ix > w - 1:
                    ix = w - 1
                for ch in range(c):
                    out[ch, zz, yy, xx] = labels[ch, iz, iy, ix]
    return out


def warp_linear(img, disp):
    img = np.ascontiguousarray(img)
    disp = np.ascontiguousarray(disp)
    if img.ndim == 3:
        return _warp2d(img, disp)
    return _warp3d(img, disp)


def warp_linear_bwd(img, disp, g):
    img = np.ascontiguousarray(img)
    disp = np.ascontiguousarray(disp)
    g = np.ascontiguousarray(g)
    if img.ndim == 3:
        return _warp2d_bwd(img, disp, g)
    return _warp3d_bwd(img, disp, g)


def warp_nearest(labels, disp):
    labels = np.ascontiguousarray(labels)
    disp = np.ascontiguousarray(disp)
    if labels.ndim == 3:
        return _warp2d_nearest(labels, disp)
    return _warp3d_nearest(labels, disp)


# ---------------------------------------------------------------------------
# linear resize
# ---------------------------------------------------------------------------

@njit(cache=True)
def _resize2d(x, iy, fy, ix, fx):
    c = x.shape[0]
    oh = iy.size
    ow = ix.size
    out = np.empty((c, oh, ow), F32)
    for ch in range(c):
        for yy in range(oh):
            i0 = iy[yy]
            wy = fy[yy]
            for xx in range(ow):
                j0 = ix[xx]
                wx = fx[xx]
                v0 = x[ch, i0, j0] * (F32(1.0) - wx) + x[ch, i0, j0 + 1] * wx
                v1 = x[ch, i0 + 1, j0] * (F32(1.0) - wx) + x[ch, i0 + 1, j0 + 1] * wx
                out[ch, yy, xx] = v0 * (F32(1.0) - wy) + v1 * wy
    return out


@njit(cache=True)
def _resize3d(x, iz, fz, iy, fy, ix, fx):
    c = x.shape[0]
    od = iz.size
    oh = iy.size
    ow = ix.size
    out = np.empty((c, od, oh, ow), F32)
    for ch in range(c):
        for zz in range(od):
            k0 = iz[zz]
            wz = fz[zz]
            for yy in range(oh):
                i0 = iy[yy]
                wy = fy[yy]
                for xx in range(ow):
                    j0 = ix[xx]
                    wx = fx[xx]
                    c00 = x[ch, k0, i0, j0] * (F32(1.0) - wx) + x[ch, k0, i0, j0 + 1] * wx
                    c01 = x[ch, k0, i0 + 1, j0] * (F32(1.0) - wx) + x[ch, k0, i0 + 1, j0 + 1] * wx
                    c10 = x[ch, k0 + 1, i0, j0] * (F32(1.0) - wx) + x[ch, k0 + 1, i0, j0 + 1] * wx
                    c11 = x[ch, k0 + 1, i0 + 1, j0] * (F32(1.0) - wx) + x[ch, k0 + 1, i0 + 1, j0 + 1] * wx
                    e0 = c00 * (F32(1.0) - wy) + c01 * wy
                    e1 = c10 * (F32(1.0) - wy) + c11 * wy
                    out[ch, zz, yy, xx] = e0 * (F32(1.0) - wz) + e1 * wz
    return out


@njit(cache=True)
def _resize2d_bwd(g, iy, fy, ix, fx, ih, iw):
    c = g.shape[0]
    oh = iy.size
    ow = ix.size
    gx = np.zeros((c, ih, iw), F32)
    for ch in range(c):
        for yy in range(oh):
            i0 = iy[yy]
            wy = fy[yy]
            for xx in range(ow):
                j0 = ix[xx]
                wx = fx[xx]
                gv = g[ch, yy, xx]
                gx[ch, i0, j0] += gv * (F32(1.0) - wy) * (F32(1.0) - wx)
                gx[ch, i0, j0 + 1] += gv * (F32(1.0) - wy) * wx
                gx[ch, i0 + 1, j0] += gv * wy * (F32(1.0) - wx)
                gx[ch, i0 + 1, j0 + 1] += gv * wy * wx
    return gx


@njit(cache=True)
def _resize3d_bwd(g, iz, fz, iy, fy, ix, fx, idd, ih, iw):
    c = g.shape[0]
    od = iz.size
    oh = iy.size
    ow = ix.size
    gx = np.zeros((c, idd, ih, iw), F32)
    for ch in range(c):
        for zz in range(od):
            k0 = iz[zz]
            wz = fz[zz]
            for yy in range(oh):
                i0 = iy[yy]
                wy = fy[yy]
                for xx in range(ow):
                    j0 = ix[xx]
                    wx = fx[xx]
                    gv = g[ch, zz, yy, xx]
                    wz0 = F32(1.0) - wz
                    wy0 = F32(1.0) - wy
                    wx0 = F32(1.0) - wx
                    gx[ch, k0, i0, j0] += gv * wz0 * wy0 * wx0
                    gx[ch, k0, i0, j0 + 1] += gv * wz0 * wy0 * wx
                    gx[ch, k0, i0 + 1, j0] += gv * wz0 * wy * wx0
                    gx[ch, k0, i0 + 1, j0 + 1] += gv * wz0 * wy * wx
                    gx[ch, k0 + 1, i0, j0] += gv * wz * wy0 * wx0
                    gx[ch, k0 + 1, i0, j0 + 1] += gv * wz * wy0 * wx
                    gx[ch, k0 + 1, i0 + 1, j0] += gv * wz * wy * wx0
                    gx[ch, k0 + 1, i0 + 1, j0 + 1] += gv * wz * wy * wx
    return gx


def _axis_tables(in_spatial, out_spatial):
    tables = []
    for s_in, s_out in zip(in_spatial, out_spatial):
        i0, frac = resize_axis_indices(s_in, s_out, F32)
        tables.append((i0, frac.astype(F32)))
    return tables


def resize_linear(x, out_spatial):
    x = np.ascontiguousarray(x)
    if tuple(x.shape[1:]) == tuple(out_spatial):
        return x.copy()
    tabs = _axis_tables(x.shape[1:], out_spatial)
    if x.ndim == 3:
        return _resize2d(x, tabs[0][0], tabs[0][1], tabs[1][0], tabs[1][1])
    return _resize3d(
        x, tabs[0][0], tabs[0][1], tabs[1][0], tabs[1][1], tabs[2][0], tabs[2][1]
    )


def resize_linear_bwd(g, in_spatial):
    g = np.ascontiguousarray(g)
    if tuple(g.shape[1:]) == tuple(in_spatial):
        return g.copy()
    tabs = _axis_tables(in_spatial, g.shape[1:])
    if g.ndim == 3:
        return _resize2d_bwd(g, tabs[0][0], tabs[0][1], tabs[1][0], tabs[1][1], *in_spatial)
    return _resize3d_bwd(
        g, tabs[0][0], tabs[0][1], tabs[1][0], tabs[1][1], tabs[2][0], tabs[2][1], *in_spatial
    )


# ---------------------------------------------------------------------------
# centered window sums, zero padding
# ---------------------------------------------------------------------------

@njit(cache=True)
def _wsum2d(x, r):
    c, h, w = x.shape
    tmp = np.zeros((c, h, w), F32)
    out = np.zeros((c, h, w), F32)
    for ch in range(c):
        for yy in range(h):
            for xx in range(w):
                lo = xx - r
                if lo < 0:
                    lo = 0
                hi = xx + r + 1
                if hi > w:
                    hi = w
                acc = F32(0.0)
                for k in range(lo, hi):
                    acc += x[ch, yy, k]
                tmp[ch, yy, xx] = acc
        for xx in range(w):
            for yy in range(h):
                lo = yy - r
                if lo < 0:
                    lo = 0
                hi = yy + r + 1
                if hi > h:
                    hi = h
                acc = F32(0.0)
                for k in range(lo, hi):
                    acc += tmp[ch, k, xx]
                out[ch, yy, xx] = acc
    return out


@njit(cache=True)
def _wsum3d(x, r):
    c, d, h, w = x.shape
    t1 = np.zeros((c, d, h, w), F32)
    t2 = np.zeros((c, d, h, w), F32)
    out = np.zeros((c, d, h, w), F32)
    for ch in range(c):
        for zz in range(d):
            for yy in range(h):
                for xx in range(w):
                    lo = xx - r
                    if lo < 0:
                        lo = 0
                    hi = xx + r + 1
                    if hi > w:
                        hi = w
                    acc = F32(0.0)
                    for k in range(lo, hi):
                        acc += x[ch, zz, yy, k]
                    t1[ch, zz, yy, xx] = acc
            for xx in range(w):
                for yy in range(h):
                    lo = yy - r
                    if lo < 0:
                        lo = 0
                    hi = yy + r + 1
                    if hi > h:
                        hi = h
                    acc = F32(0.0)
                    for k in range(lo, hi):
                        acc += t1[ch, zz, k, xx]
                    t2[ch, zz, yy, xx] = acc
        for yy in range(h):
            for xx in range(w):
                for zz in range(d):
                    lo = zz - r
                    if lo < 0:
                        lo = 0
                    hi = zz + r + 1
                    if hi > d:
                        hi = d
                    acc = F32(0.0)
                    for k in range(lo, hi):
                        acc += t2[ch, k, yy, xx]
                    out[ch, zz, yy, xx] = acc
    return out


def window_sum(x, width):
    x = np.ascontiguousarray(x)
    r = width // 2
    if x.ndim == 3:
        return _wsum2d(x, r)
    return _wsum3d(x, r)
