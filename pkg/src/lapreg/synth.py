"""Synthetic registration pairs with known ground truth.

The fixed image is a normalized sum of random Gaussian bumps with a
4-label segmentation (background plus three bump groups). A smooth random
velocity field v is drawn by upsampling coarse noise and box-smoothing
it; the moving image is the fixed image warped by the flow of -v, so the
transform that aligns moving back to fixed is the integration of +v.
Everything is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffeo
from . import kernels
from . import pyramid
from .errors import ShapeError

SEG_LABELS = (1, 2, 3)
SEG_THRESHOLD = 0.2
BLOB_COUNT = 9
TEXTURE_AMPLITUDE = 0.5


@dataclass
class SynthPair:
    fixed: np.ndarray
    moving: np.ndarray
    seg_fixed: np.ndarray
    seg_moving: np.ndarray
    transform: diffeo.Transform  # aligns moving -> fixed
    velocity: np.ndarray  # v with transform = integrate(v)


def smooth_velocity(rng, spatial, vmax, grain: int = 16, width: int = 5) -> np.ndarray:
    """Smooth random velocity with per-voxel norm capped at vmax.

    Coarse white noise (one knot every `grain` voxels) is linearly
    upsampled to full resolution, box-smoothed, then rescaled so the
    largest per-voxel vector norm equals vmax.
    """
    rank = len(spatial)
    if vmax < 0:
        raise ShapeError(f"smooth_velocity: vmax must be >= 0, got {vmax}")
    if vmax == 0:
        return np.zeros((rank,) + tuple(spatial), dtype=np.float32)
    coarse = tuple(max(2, int(np.ceil(e / grain))) for e in spatial)
    v = rng.standard_normal((rank,) + coarse).astype(np.float32)
    v = kernels.resize_linear(v, tuple(spatial))
    v = kernels.window_sum(v, width) / np.float32(width**rank)
    norms = np.sqrt((v.astype(np.float64) ** 2).sum(axis=0))
    peak = norms.max()
    if peak > 0:
        v *= np.float32(vmax / peak)
    return v


def _blob_image(rng, spatial):
    rank = len(spatial)
    grids = np.meshgrid(*(np.arange(e, dtype=np.float32) for e in spatial), indexing="ij")
    total = np.zeros(spatial, dtype=np.float32)
    groups = [np.zeros(spatial, dtype=np.float32) for _ in SEG_LABELS]
    for j in range(BLOB_COUNT):
        center = [rng.uniform(0.15, 0.85) * (e - 1) for e in spatial]
        sigma = rng.uniform(0.05, 0.12) * min(spatial)
        amp = rng.uniform(0.6, 1.0)
        r2 = np.zeros(spatial, dtype=np.float32)
        for a in range(rank):
            d = grids[a] - np.float32(center[a])
            r2 += d * d
        bump = np.float32(amp) * np.exp(-r2 / np.float32(2.0 * sigma * sigma))
        total += bump
        groups[j % len(SEG_LABELS)] += bump
    peak = total.max()
    total /= peak
    stack = np.stack([np.full(spatial, SEG_THRESHOLD, dtype=np.float32)] + [g / peak for g in groups])
    seg = np.argmax(stack, axis=0).astype(np.uint16)
    # smooth texture keeps local contrast everywhere, so dense alignment
    # stays observable outside the blobs
    coarse = tuple(max(2, e // 5) for e in spatial)
    texture = kernels.resize_linear(
        rng.standard_normal((1,) + coarse).astype(np.float32), spatial
    )[0]
    texture = kernels.window_sum(texture[np.newaxis], 3)[0] / np.float32(3**rank)
    span = texture.max() - texture.min()
    texture = (texture - texture.min()) / max(span, np.float32(1e-6))
    img = total + np.float32(TEXTURE_AMPLITUDE) * texture
    img /= img.max()
    return np.ascontiguousarray(img[np.newaxis]), seg[np.newaxis]


def synth_pair(
    seed: int,
    extents,
    deformation_scale: float,
    timesteps: int = diffeo.DEFAULT_TIMESTEPS,
    grain: int = 16,
) -> SynthPair:
    """Deterministic (fixed, moving, ground truth, segmentations) tuple.

    `grain` sets the knot spacing of the random velocity field: smaller
    values give deformations with finer spatial detail.
    """
    spatial = tuple(int(e) for e in extents)
    if any(e < 8 for e in spatial):
        raise ShapeError(f"synth_pair: extents {spatial} too small (need >= 8)")
    rng = np.random.default_rng(seed)
    fixed, seg_fixed = _blob_image(rng, spatial)
    velocity = smooth_velocity(rng, spatial, deformation_scale, grain=grain)
    forward = diffeo.integrate(velocity, timesteps)  # aligns moving -> fixed
    backward_disp = diffeo.integrate(-velocity, timesteps).disp_array
    moving = pyramid.warp(fixed, backward_disp)
    seg_moving = kernels.warp_nearest(seg_fixed, backward_disp)
    return SynthPair(
        fixed=fixed,
        moving=moving,
        seg_fixed=seg_fixed,
        seg_moving=seg_moving,
        transform=forward,
        velocity=velocity,
    )
