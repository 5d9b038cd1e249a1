import numpy as np
import pytest

from lapreg import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation once so timed tests measure compute, not compile."""
    rng = np.random.default_rng(0)
    for rank in (2, 3):
        sp = (6,) * rank
        img = rng.standard_normal((2,) + sp).astype(np.float32)
        disp = (rng.standard_normal((rank,) + sp) * 0.5).astype(np.float32)
        lab = rng.integers(0, 3, size=(1,) + sp).astype(np.uint16)
        g = rng.standard_normal(img.shape).astype(np.float32)
        w = rng.standard_normal((2, 2) + (3,) * rank).astype(np.float32)
        wt = rng.standard_normal((2, 2) + (4,) * rank).astype(np.float32)
        kernels.warp_linear(img, disp)
        kernels.warp_linear_bwd(img, disp, g)
        kernels.warp_nearest(lab, disp)
        kernels.resize_linear(img, tuple(e // 2 for e in sp))
        kernels.resize_linear(img, tuple(e * 2 for e in sp))
        kernels.resize_linear_bwd(g, tuple(e * 2 for e in sp))
        kernels.window_sum(img, 3)
        kernels.conv_fwd(img, w, None, 1, 1)
        kernels.tconv_fwd(img, wt, None)
