"""Local NCC, the multi-resolution similarity term, and the level loss.

The local correlation at voxel x is computed from window sums over the
centered w^D neighborhood (zero padded):

    cc(x) = cross(x)^2 / (var_f(x) * var_m(x) + eps)

with cross = sum_w(FM) - sum_w(F) sum_w(M) / n and the variances defined
analogously; n = w^D. Squaring makes the measure bounded in [0, 1] and
insensitive to affine intensity changes. The similarity over K levels is
the weighted sum of per-level NCC values with coarse levels down-weighted
by powers of two, negated so that better alignment means lower loss. The
level loss adds a squared-forward-difference smoothness penalty on the
velocity field, weighted by lambda / 2**(L - p).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from . import pyramid
from .errors import ShapeError


@dataclass
class LossConfig:
    levels: int = 3
    lam: float = 4.0
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.levels < 1:
            raise ShapeError(f"LossConfig: levels must be >= 1, got {self.levels}")
        if self.lam < 0:
            raise ShapeError(f"LossConfig: lambda must be >= 0, got {self.lam}")
        if self.epsilon <= 0:
            raise ShapeError(f"LossConfig: epsilon must be > 0, got {self.epsilon}")

    @staticmethod
    def window(i: int) -> int:
        """NCC window edge at pyramid level i (coarsest level is 1)."""
        return 1 + 2 * i


def local_ncc(fixed, moving, width: int, epsilon: float = 1e-5):
    """Mean squared local NCC over all voxels; scalar Node in [0, ~1]."""
    f = ad.as_node(fixed)
    m = ad.as_node(moving)
    if f.value.shape != m.value.shape:
        raise ShapeError(f"local_ncc: shapes {f.value.shape} and {m.value.shape} differ")
    if f.value.shape[0] != 1:
        raise ShapeError(f"local_ncc: expected single-channel fields, got {f.value.shape[0]}")
    if width < 1 or width % 2 == 0:
        raise ShapeError(f"local_ncc: window must be odd and >= 1, got {width}")
    n = float(width ** (f.value.ndim - 1))
    sum_f = ad.window_sum(f, width)
    sum_m = ad.window_sum(m, width)
    sum_ff = ad.window_sum(ad.square(f), width)
    sum_mm = ad.window_sum(ad.square(m), width)
    sum_fm = ad.window_sum(ad.mul(f, m), width)
    cross = ad.sub(sum_fm, ad.scale(ad.mul(sum_f, sum_m), 1.0 / n))
    var_f = ad.sub(sum_ff, ad.scale(ad.square(sum_f), 1.0 / n))
    var_m = ad.sub(sum_mm, ad.scale(ad.square(sum_m), 1.0 / n))
    cc = ad.div(ad.square(cross), ad.add_scalar(ad.mul(var_f, var_m), epsilon))
    return ad.mean(cc)


def similarity_pyramid(fixed, moving, levels: int, cfg: LossConfig | None = None):
    """Negated, level-weighted NCC sum over a K-level pyramid.

    Inputs are at the level-K resolution; both are decomposed into K
    levels and level i contributes -NCC / 2**(K - i) with window 1 + 2i.
    """
    cfg = cfg or LossConfig()
    if levels > cfg.levels:
        raise ShapeError(f"similarity_pyramid: {levels} levels exceeds configured {cfg.levels}")
    pf = pyramid.build_pyramid(ad.as_node(fixed), levels)
    pm = pyramid.build_pyramid(ad.as_node(moving), levels)
    total = None
    for i in range(1, levels + 1):
        ncc = local_ncc(pf[i - 1], pm[i - 1], cfg.window(i), cfg.epsilon)
        term = ad.scale(ncc, -1.0 / float(2 ** (levels - i)))
        total = term if total is None else ad.add(total, term)
    return total


def smoothness(v):
    """Sum over axes of the mean squared forward difference of v.

    The mean for each axis runs over channels and that axis's valid
    positions (the last slice has no forward difference and is excluded).
    """
    node = ad.as_node(v)
    total = None
    for axis in range(node.value.ndim - 1):
        term = ad.mean(ad.square(ad.axis_diff(node, axis)))
        total = term if total is None else ad.add(total, term)
    return total


def level_loss(fixed, moving_warped, v, level: int, cfg: LossConfig, with_parts: bool = False):
    """Similarity pyramid at `level` plus weighted velocity smoothness."""
    if not 1 <= level <= cfg.levels:
        raise ShapeError(f"level_loss: level {level} outside [1, {cfg.levels}]")
    sim = similarity_pyramid(fixed, moving_warped, level, cfg)
    reg = ad.scale(smoothness(v), cfg.lam / float(2 ** (cfg.levels - level)))
    total = ad.add(sim, reg)
    if with_parts:
        return total, sim, reg
    return total
