"""Central finite-difference verification of every autodiff operation.

For each op the suite builds a scalar probe loss sum(op(inputs) * probe),
takes reverse-mode gradients on the float32 graph, and compares them per
element against central differences. The finite-difference side evaluates
the same graph at float64 (which routes through the numpy reference
backend), so the oracle carries no float32 roundoff of its own; the
float32-vs-float64 forward gap is absorbed by the stated tolerances.

Inputs are drawn away from the kinks of non-smooth ops (relu corner,
interpolation cell boundaries), where two-sided differences are undefined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

REL_TOL = 1e-2
ABS_FLOOR = 1e-4
STEP = 1e-3


def _signed_uniform(rng, shape, lo=0.2, hi=1.2):
    """Values with |x| in [lo, hi]: keeps relu/softsign kinks > STEP away."""
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return (mag * sign).astype(np.float32)


def _safe_disp(rng, rank, spatial, reach=2):
    """Displacements whose sample coordinates keep fraction in [0.25, 0.75]."""
    whole = rng.integers(-reach, reach + 1, size=(rank,) + spatial)
    frac = rng.uniform(0.25, 0.75, size=(rank,) + spatial)
    return (whole + frac).astype(np.float32)


@dataclass
class OpCheck:
    name: str
    make: callable  # rng -> (list[(name, array)], build(nodes: dict) -> Node)


def _binary(op):
    def make(rng):
        a = _signed_uniform(rng, (2, 5, 5))
        b = _signed_uniform(rng, (2, 5, 5), lo=0.5, hi=1.5)
        return [("a", a), ("b", b)], lambda t: op(t["a"], t["b"])

    return make


def _unary(op, shape=(2, 5, 5)):
    def make(rng):
        return [("a", _signed_uniform(rng, shape))], lambda t: op(t["a"])

    return make


def _conv_case(rank, stride):
    def make(rng):
        spatial = (6,) * rank
        x = _signed_uniform(rng, (2,) + spatial)
        w = (rng.standard_normal((3, 2) + (3,) * rank) * 0.5).astype(np.float32)
        b = (rng.standard_normal(3) * 0.2).astype(np.float32)
        return (
            [("x", x), ("w", w), ("b", b)],
            lambda t: ad.conv(t["x"], t["w"], t["b"], stride=stride),
        )

    return make


def _tconv_case(rank):
    def make(rng):
        spatial = (4,) * rank
        x = _signed_uniform(rng, (2,) + spatial)
        w = (rng.standard_normal((2, 3) + (4,) * rank) * 0.4).astype(np.float32)
        b = (rng.standard_normal(3) * 0.2).astype(np.float32)
        return (
            [("x", x), ("w", w), ("b", b)],
            lambda t: ad.conv_transpose(t["x"], t["w"], t["b"]),
        )

    return make


def _grid_sample_case(rank):
    def make(rng):
        spatial = (8,) * rank if rank == 2 else (6,) * rank
        img = _signed_uniform(rng, (2,) + spatial)
        disp = _safe_disp(rng, rank, spatial)
        return (
            [("img", img), ("disp", disp)],
            lambda t: ad.grid_sample(t["img"], t["disp"]),
        )

    return make


def _resize_case(rank, factor):
    def make(rng):
        spatial = (6,) * rank
        x = _signed_uniform(rng, (2,) + spatial)
        return [("x", x)], lambda t: ad.resize_linear(t["x"], factor)

    return make


def _window_sum_case(rank):
    def make(rng):
        spatial = (7,) * rank if rank == 2 else (5,) * rank
        x = _signed_uniform(rng, (1,) + spatial)
        return [("x", x)], lambda t: ad.window_sum(t["x"], 3)

    return make


def _concat_case(rng):
    a = _signed_uniform(rng, (1, 5, 5))
    b = _signed_uniform(rng, (2, 5, 5))
    return [("a", a), ("b", b)], lambda t: ad.concat_channels([t["a"], t["b"]])


def _broadcast_case(rng):
    a = _signed_uniform(rng, (3,))
    return [("a", a)], lambda t: ad.broadcast_spatial(t["a"], (4, 5))


CHECKS = [
    OpCheck("add", _binary(ad.add)),
    OpCheck("sub", _binary(ad.sub)),
    OpCheck("mul", _binary(ad.mul)),
    OpCheck("div", _binary(ad.div)),
    OpCheck("scale", _unary(lambda a: ad.scale(a, -1.7))),
    OpCheck("add_scalar", _unary(lambda a: ad.add_scalar(a, 0.31))),
    OpCheck("square", _unary(ad.square)),
    OpCheck("leaky_relu", _unary(lambda a: ad.leaky_relu(a, 0.2))),
    OpCheck("softsign", _unary(ad.softsign)),
    OpCheck("concat_channels", _concat_case),
    OpCheck("broadcast_spatial", _broadcast_case),
    OpCheck("axis_diff", _unary(lambda a: ad.axis_diff(a, 1))),
    OpCheck("mean", _unary(ad.mean)),
    OpCheck("sum", _unary(ad.sum_all)),
    OpCheck("conv2d_s1", _conv_case(2, 1)),
    OpCheck("conv2d_s2", _conv_case(2, 2)),
    OpCheck("conv3d_s1", _conv_case(3, 1)),
    OpCheck("conv3d_s2", _conv_case(3, 2)),
    OpCheck("conv_transpose2d", _tconv_case(2)),
    OpCheck("conv_transpose3d", _tconv_case(3)),
    OpCheck("grid_sample2d", _grid_sample_case(2)),
    OpCheck("grid_sample3d", _grid_sample_case(3)),
    OpCheck("resize_half2d", _resize_case(2, 0.5)),
    OpCheck("resize_double2d", _resize_case(2, 2)),
    OpCheck("resize_half3d", _resize_case(3, 0.5)),
    OpCheck("resize_double3d", _resize_case(3, 2)),
    OpCheck("window_sum2d", _window_sum_case(2)),
    OpCheck("window_sum3d", _window_sum_case(3)),
]

OP_NAMES = [c.name for c in CHECKS]


@dataclass
class CheckResult:
    op: str
    seed: int
    max_err: float  # worst |ad - fd| scaled by its tolerance (<= 1 passes)
    passed: bool


def _loss_value(leaves64, build, probe64):
    nodes = {k: ad.leaf(v) for k, v in leaves64.items()}
    out = build(nodes)
    return float(ad.sum_all(ad.mul(out, ad.leaf(probe64))).value[0])


def check_op(check: OpCheck, seed: int, step=STEP, rel=REL_TOL, floor=ABS_FLOOR) -> CheckResult:
    rng = np.random.default_rng(seed)
    leaves, build = check.make(rng)
    nodes = {name: ad.leaf(arr, requires_grad=True) for name, arr in leaves}
    out = build(nodes)
    probe = rng.uniform(0.5, 1.5, size=out.value.shape).astype(np.float32)
    loss = ad.sum_all(ad.mul(out, ad.leaf(probe)))
    ad.backward(loss)

    leaves64 = {name: arr.astype(np.float64) for name, arr in leaves}
    probe64 = probe.astype(np.float64)
    worst = 0.0
    for name, arr in leaves:
        grad = nodes[name].grad
        if grad is None:
            grad = np.zeros_like(arr)
        base = leaves64[name]
        flat = base.reshape(-1)
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = _loss_value(leaves64, build, probe64)
            flat[i] = orig - step
            lo = _loss_value(leaves64, build, probe64)
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * step)
        fd = fd.reshape(arr.shape)
        tol = np.maximum(floor, rel * np.maximum(np.abs(fd), np.abs(grad)))
        worst = max(worst, float((np.abs(grad - fd) / tol).max()))
    return CheckResult(op=check.name, seed=seed, max_err=worst, passed=worst <= 1.0)


def run(op: str | None = None, seeds=(0, 1, 2)) -> list[CheckResult]:
    selected = CHECKS if op is None else [c for c in CHECKS if c.name == op]
    if not selected:
        raise KeyError(f"unknown op {op!r}; known: {', '.join(OP_NAMES)}")
    results = []
    for check in selected:
        for seed in seeds:
            results.append(check_op(check, seed))
    return results
