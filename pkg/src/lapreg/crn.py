"""Per-level registration network and the multi-level pyramid stack.

Each level runs the same convolutional architecture: a feature encoder
(two stride-1 convs, one stride-2 conv), a chain of pre-activation
residual blocks at half resolution, and a decoder (stride-2 transpose
conv, two stride-1 convs, and an output conv squashed by SoftSign). The
encoder output before downsampling is added back to the upsampled decoder
features, and every hidden conv is followed by LeakyReLU(0.2); the output
conv is followed only by SoftSign, scaled by `vel_scale` to produce the
velocity field.

Across levels, the previous level's velocity is upsampled and (a) used to
pre-warp the moving image for the next level's input, (b) concatenated
into that input, and (c) added to the next level's raw output. The
previous decoder's first hidden feature map is added to the next level's
downsampled encoder output, which runs at the same resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import diffeo
from . import pyramid
from .errors import ShapeError

LEAKY_SLOPE = 0.2
CONV_KERNEL = 3
UP_KERNEL = 4
DEFAULT_CHANNELS = 28
DEFAULT_BLOCKS = 5
DEFAULT_VEL_SCALE = 0.4


@dataclass
class ConvParams:
    w: ad.Node
    b: ad.Node


@dataclass
class CrnParams:
    """Learnable tensors for one pyramid level, in forward order."""

    enc1: ConvParams
    enc2: ConvParams
    enc_down: ConvParams
    blocks: list[tuple[ConvParams, ConvParams]]
    up: ConvParams
    dec1: ConvParams
    dec2: ConvParams
    out: ConvParams

    def named_params(self):
        yield "enc1", self.enc1
        yield "enc2", self.enc2
        yield "enc_down", self.enc_down
        for r, (c1, c2) in enumerate(self.blocks):
            yield f"block{r}.conv1", c1
            yield f"block{r}.conv2", c2
        yield "up", self.up
        yield "dec1", self.dec1
        yield "dec2", self.dec2
        yield "out", self.out

    def named_tensors(self):
        for name, p in self.named_params():
            yield f"{name}.w", p.w
            yield f"{name}.b", p.b

    def set_trainable(self, flag: bool):
        for _, node in self.named_tensors():
            node.requires_grad = flag


@dataclass
class LapirnParams:
    """All levels plus the knobs shared across them."""

    levels: list[CrnParams]
    spatial_rank: int
    channels: int
    blocks: int
    vel_scale: float = DEFAULT_VEL_SCALE
    mode: str = diffeo.DIFFEO

    def named_tensors(self):
        for i, crn in enumerate(self.levels):
            for name, node in crn.named_tensors():
                yield f"level{i}.{name}", node


def in_channels(level: int, spatial_rank: int) -> int:
    """2 stacked scans at the coarsest level, plus the upsampled velocity after."""
    return 2 if level == 1 else 2 + spatial_rank


def _he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / ((1.0 + LEAKY_SLOPE**2) * fan_in)))


def _conv_init(rng, c_out, c_in, kernel, rank, std=None):
    shape = (c_out, c_in) + (kernel,) * rank
    std = _he_std(c_in * kernel**rank) if std is None else std
    w = (rng.standard_normal(shape) * std).astype(np.float32)
    b = np.zeros(c_out, dtype=np.float32)
    return ConvParams(ad.leaf(w, requires_grad=True), ad.leaf(b, requires_grad=True))


def init_crn(rng, spatial_rank, c_in, channels=DEFAULT_CHANNELS, blocks=DEFAULT_BLOCKS):
    c = channels
    r = spatial_rank
    up_shape = (c, c) + (UP_KERNEL,) * r
    up_w = (rng.standard_normal(up_shape) * _he_std(c * UP_KERNEL**r)).astype(np.float32)
    return CrnParams(
        enc1=_conv_init(rng, c, c_in, CONV_KERNEL, r),
        enc2=_conv_init(rng, c, c, CONV_KERNEL, r),
        enc_down=_conv_init(rng, c, c, CONV_KERNEL, r),
        blocks=[
            (_conv_init(rng, c, c, CONV_KERNEL, r), _conv_init(rng, c, c, CONV_KERNEL, r))
            for _ in range(blocks)
        ],
        up=ConvParams(
            ad.leaf(up_w, requires_grad=True),
            ad.leaf(np.zeros(c, dtype=np.float32), requires_grad=True),
        ),
        dec1=_conv_init(rng, c, c, CONV_KERNEL, r),
        dec2=_conv_init(rng, c, c, CONV_KERNEL, r),
        # near-zero output weights give an identity warm start
        out=_conv_init(rng, r, c, CONV_KERNEL, r, std=0.01),
    )


def init_lapirn(
    rng,
    spatial_rank,
    levels=3,
    channels=DEFAULT_CHANNELS,
    blocks=DEFAULT_BLOCKS,
    vel_scale=DEFAULT_VEL_SCALE,
    mode=diffeo.DIFFEO,
) -> LapirnParams:
    if mode not in (diffeo.DIFFEO, diffeo.DISPLACEMENT):
        raise ShapeError(f"init_lapirn: unknown mode {mode!r}")
    crns = [
        init_crn(rng, spatial_rank, in_channels(i, spatial_rank), channels, blocks)
        for i in range(1, levels + 1)
    ]
    return LapirnParams(
        levels=crns,
        spatial_rank=spatial_rank,
        channels=channels,
        blocks=blocks,
        vel_scale=vel_scale,
        mode=mode,
    )


def parameter_count(params: CrnParams) -> int:
    return sum(int(np.prod(t.value.shape)) for _, t in params.named_tensors())


def crn_forward(params: CrnParams, x, vel_scale=DEFAULT_VEL_SCALE, prev_hidden=None):
    """One level's forward pass: (velocity, hidden features).

    `hidden` is the first decoder feature map (the one preceding the two
    final convolutions), at full level resolution.
    """
    x = ad.as_node(x)
    if any(e % 2 for e in x.value.shape[1:]):
        raise ShapeError(f"crn_forward: extents {x.value.shape[1:]} must be even")
    if x.value.shape[0] != params.enc1.w.value.shape[1]:
        raise ShapeError(
            f"crn_forward: input has {x.value.shape[0]} channels, "
            f"level expects {params.enc1.w.value.shape[1]}"
        )
    e1 = ad.leaky_relu(ad.conv(x, params.enc1.w, params.enc1.b), LEAKY_SLOPE)
    e2 = ad.leaky_relu(ad.conv(e1, params.enc2.w, params.enc2.b), LEAKY_SLOPE)
    d = ad.leaky_relu(ad.conv(e2, params.enc_down.w, params.enc_down.b, stride=2), LEAKY_SLOPE)
    if prev_hidden is not None:
        d = ad.add(d, prev_hidden)
    for c1, c2 in params.blocks:
        h = ad.conv(ad.leaky_relu(d, LEAKY_SLOPE), c1.w, c1.b)
        h = ad.conv(ad.leaky_relu(h, LEAKY_SLOPE), c2.w, c2.b)
        d = ad.add(d, h)
    u = ad.leaky_relu(ad.conv_transpose(d, params.up.w, params.up.b), LEAKY_SLOPE)
    u = ad.add(u, e2)
    hidden = ad.leaky_relu(ad.conv(u, params.dec1.w, params.dec1.b), LEAKY_SLOPE)
    h2 = ad.leaky_relu(ad.conv(hidden, params.dec2.w, params.dec2.b), LEAKY_SLOPE)
    v = ad.scale(ad.softsign(ad.conv(h2, params.out.w, params.out.b)), vel_scale)
    return v, hidden


@dataclass
class LevelResult:
    fixed: ad.Node
    moving: ad.Node
    velocity: ad.Node
    transform: diffeo.Transform
    warped: ad.Node


def lapirn_forward(
    params: LapirnParams,
    fixed,
    moving,
    timesteps: int = diffeo.DEFAULT_TIMESTEPS,
    active_levels: int | None = None,
    reintegrate: bool = False,
) -> list[LevelResult]:
    """Run the pyramid stack coarse to fine, returning one result per level.

    With `active_levels` = p < L only levels 1..p execute (used during
    progressive training). `reintegrate` recomputes the pre-warp transform
    by integrating the upsampled velocity instead of upsampling the
    previous level's integrated displacement.
    """
    total = len(params.levels)
    active = total if active_levels is None else active_levels
    if not 1 <= active <= total:
        raise ShapeError(f"lapirn_forward: active_levels {active} outside [1, {total}]")
    f_val = fixed.value if isinstance(fixed, ad.Node) else fixed
    m_val = moving.value if isinstance(moving, ad.Node) else moving
    if f_val.shape != m_val.shape:
        raise ShapeError(f"lapirn_forward: shapes {f_val.shape} and {m_val.shape} differ")
    div = 2**total
    if any(e % div for e in f_val.shape[1:]):
        raise ShapeError(
            f"lapirn_forward: extents {f_val.shape[1:]} must be divisible by {div}"
        )
    pf = pyramid.build_pyramid(ad.as_node(fixed), total)
    pm = pyramid.build_pyramid(ad.as_node(moving), total)

    results: list[LevelResult] = []
    hidden = None
    v_prev = None
    phi_prev = None
    for i in range(1, active + 1):
        fi, mi = pf[i - 1], pm[i - 1]
        if i == 1:
            x = ad.concat_channels([fi, mi])
            v, hidden = crn_forward(params.levels[0], x, params.vel_scale, prev_hidden=None)
        else:
            v_hat = pyramid.upsample_disp(v_prev)
            if params.mode == diffeo.DIFFEO and reintegrate:
                phi_hat = diffeo.integrate(v_hat, timesteps).disp
            else:
                phi_hat = pyramid.upsample_disp(phi_prev.disp)
            x = ad.concat_channels([fi, pyramid.warp(mi, phi_hat), v_hat])
            v_raw, hidden = crn_forward(params.levels[i - 1], x, params.vel_scale, prev_hidden=hidden)
            v = ad.add(v_raw, v_hat)
        if params.mode == diffeo.DIFFEO:
            phi = diffeo.integrate(v, timesteps)
        else:
            phi = diffeo.Transform(disp=v, kind=diffeo.DISPLACEMENT, source=v)
        results.append(
            LevelResult(fixed=fi, moving=mi, velocity=v, transform=phi,
                        warped=pyramid.warp(mi, phi.disp))
        )
        v_prev, phi_prev = v, phi
    return results
