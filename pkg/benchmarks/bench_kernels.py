#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on registration-sized inputs and prints per-call
times plus the speedup. The numba backend is imported directly (not via
LAPREG_BACKEND), so one process measures both.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from lapreg.kernels import _numpy as np_impl

try:
    from lapreg.kernels import _numba as nb_impl
except ImportError:
    nb_impl = None


def timeit(fn, repeat):
    fn()  # warm-up (JIT compile on the numba side)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def cases(rng):
    x2 = rng.standard_normal((16, 96, 96)).astype(np.float32)
    w2 = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
    b2 = np.zeros(16, np.float32)
    g2 = rng.standard_normal((16, 96, 96)).astype(np.float32)
    wt2 = rng.standard_normal((16, 16, 4, 4)).astype(np.float32)
    xh2 = rng.standard_normal((16, 48, 48)).astype(np.float32)
    img = rng.standard_normal((1, 96, 96)).astype(np.float32)
    disp = (rng.standard_normal((2, 96, 96)) * 2).astype(np.float32)
    gimg = rng.standard_normal((1, 96, 96)).astype(np.float32)
    x3 = rng.standard_normal((8, 24, 24, 24)).astype(np.float32)
    w3 = rng.standard_normal((8, 8, 3, 3, 3)).astype(np.float32)
    d3 = (rng.standard_normal((3, 24, 24, 24)) * 2).astype(np.float32)

    yield "conv2d fwd 16ch 96^2", lambda k: k.conv_fwd(x2, w2, b2, 1, 1)
    yield "conv2d bwd_x", lambda k: k.conv_bwd_x(g2, w2, 1, 1, (96, 96))
    yield "conv2d bwd_w", lambda k: k.conv_bwd_w(x2, g2, 1, 1, (3, 3))
    yield "tconv2d fwd 16ch 48->96", lambda k: k.tconv_fwd(xh2, wt2, b2)
    yield "warp2d fwd 96^2", lambda k: k.warp_linear(img, disp)
    yield "warp2d bwd", lambda k: k.warp_linear_bwd(img, disp, gimg)
    yield "resize2d 96->48", lambda k: k.resize_linear(img, (48, 48))
    yield "window_sum2d w=7", lambda k: k.window_sum(img, 7)
    yield "conv3d fwd 8ch 24^3", lambda k: k.conv_fwd(x3, w3, None, 1, 1)
    yield "warp3d fwd 24^3", lambda k: k.warp_linear(x3, d3)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, call in cases(rng):
        t_np = timeit(lambda: call(np_impl), args.repeat)
        if nb_impl is None:
            print(f"{name:28s} {t_np * 1e3:9.3f}ms {'n/a':>10s} {'n/a':>8s}")
            continue
        t_nb = timeit(lambda: call(nb_impl), args.repeat)
        print(f"{name:28s} {t_np * 1e3:9.3f}ms {t_nb * 1e3:9.3f}ms {t_np / t_nb:7.1f}x")
    if nb_impl is None:
        print("numba not importable; only the numpy fallback was measured")


if __name__ == "__main__":
    main()
