"""Stationary-velocity-field integration and transform analysis.

A velocity field v is integrated over unit time by scaling and squaring:
start from u = v / 2**T and compose the small transform with itself T
times, u <- u + u(x + u(x)). The result approximates the flow exp(v) and
is differentiable with respect to v. The displacement parameterization
skips integration entirely and uses phi(x) = x + v(x) directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import pyramid
from .errors import ShapeError

DEFAULT_TIMESTEPS = 7

DIFFEO = "diffeo"
DISPLACEMENT = "displacement"


@dataclass
class Transform:
    """Deformation stored as displacement u with phi(x) = x + u(x).

    `disp` may be an autodiff Node (inside a training graph) or a plain
    float32 array. `source` keeps the velocity field that produced a
    diffeo transform.
    """

    disp: object
    kind: str = DISPLACEMENT
    source: object = field(default=None, repr=False)

    @property
    def disp_array(self) -> np.ndarray:
        return self.disp.value if isinstance(self.disp, ad.Node) else self.disp

    @property
    def spatial(self) -> tuple[int, ...]:
        return tuple(self.disp_array.shape[1:])


def _check_velocity(v):
    if v.shape[0] != v.ndim - 1:
        raise ShapeError(
            f"integrate: velocity needs one channel per spatial axis, got shape {v.shape}"
        )


def integrate(v, timesteps: int = DEFAULT_TIMESTEPS) -> Transform:
    """Integrate a stationary velocity field into a diffeomorphic transform."""
    if timesteps < 1:
        raise ShapeError(f"integrate: timesteps must be >= 1, got {timesteps}")
    is_node = isinstance(v, ad.Node)
    _check_velocity(v.value if is_node else v)
    node = v if is_node else ad.as_node(v)
    u = ad.scale(node, 1.0 / float(2 ** timesteps))
    for _ in range(timesteps):
        u = ad.add(u, ad.grid_sample(u, u))
    if is_node:
        return Transform(disp=u, kind=DIFFEO, source=v)
    return Transform(disp=u.value, kind=DIFFEO, source=v)


def compose(a: Transform, b: Transform) -> np.ndarray:
    """Displacement of a∘b: apply b first, then a.

    compose(a, b)(x) = b.disp(x) + a.disp(x + b.disp(x)).
    """
    ub = b.disp_array
    ua = a.disp_array
    if ua.shape != ub.shape:
        raise ShapeError(f"compose: displacement shapes differ, {ua.shape} vs {ub.shape}")
    return ub + pyramid.warp(ua, ub)


def jacobian_det(t: Transform) -> np.ndarray:
    """Per-voxel determinant of d(phi)/dx, phi = x + u.

    Central differences on interior voxels, one-sided on faces
    (numpy.gradient's stencil). Returns a single-channel float32 field.
    """
    u = t.disp_array
    rank = u.shape[0]
    if any(e < 3 for e in u.shape[1:]):
        raise ShapeError(f"jacobian_det: extents {u.shape[1:]} must all be >= 3")
    u64 = u.astype(np.float64)
    # jac[i][j] = d(phi_i)/d(x_j)
    jac = [[np.gradient(u64[i], axis=j) for j in range(rank)] for i in range(rank)]
    for i in range(rank):
        jac[i][i] = jac[i][i] + 1.0
    if rank == 2:
        det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]
    else:
        det = (
            jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0])
        )
    return det[np.newaxis].astype(np.float32)


def folding_stats(detj: np.ndarray) -> tuple[float, float]:
    """(percent of voxels with det <= 0, population std of det)."""
    vals = np.asarray(detj, dtype=np.float64).ravel()
    pct = 100.0 * float(np.count_nonzero(vals <= 0.0)) / vals.size
    return pct, float(vals.std())
