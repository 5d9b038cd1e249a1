import numpy as np
import pytest

from lapreg import diffeo, synth
from lapreg.errors import ShapeError

from oracles import interior_epe


def _constant_field(shape, values):
    v = np.zeros((len(values),) + shape, dtype=np.float32)
    for c, val in enumerate(values):
        v[c] = val
    return v


class TestIntegrate:
    def test_zero_velocity_is_identity(self):
        t = diffeo.integrate(np.zeros((2, 16, 16), np.float32))
        assert t.kind == diffeo.DIFFEO
        assert not t.disp_array.any()

    def test_constant_velocity_is_translation(self):
        v = _constant_field((32, 32), (1.5, -0.75))
        t = diffeo.integrate(v, 7)
        inner = t.disp_array[:, 3:-3, 3:-3]
        assert abs(inner[0] - 1.5).max() < 1e-4
        assert abs(inner[1] + 0.75).max() < 1e-4

    def test_default_timesteps(self):
        assert diffeo.DEFAULT_TIMESTEPS == 7

    def test_semigroup_half_velocity(self):
        rng = np.random.default_rng(4)
        v = synth.smooth_velocity(rng, (48, 48), 3.0)
        full = diffeo.integrate(v, 7)
        half = diffeo.integrate(0.5 * v, 7)
        twice = diffeo.compose(half, half)
        m = 6
        err = np.sqrt(((twice - full.disp_array) ** 2).sum(axis=0))[m:-m, m:-m]
        assert err.max() < 0.05

    def test_3d_constant_velocity(self):
        v = _constant_field((12, 12, 12), (0.5, -0.25, 1.0))
        t = diffeo.integrate(v, 7)
        inner = t.disp_array[:, 2:-2, 2:-2, 2:-2]
        expected = np.broadcast_to(
            np.array([0.5, -0.25, 1.0], np.float32).reshape(3, 1, 1, 1), inner.shape
        )
        np.testing.assert_allclose(inner, expected, atol=1e-4)


class TestJacobian:
    def test_identity_is_one(self):
        t = diffeo.Transform(disp=np.zeros((2, 10, 10), np.float32))
        np.testing.assert_allclose(diffeo.jacobian_det(t), 1.0, atol=1e-6)

    def test_uniform_scaling_det(self):
        h = w = 20
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float32),
                             np.arange(w, dtype=np.float32), indexing="ij")
        u = np.stack([0.1 * yy, 0.1 * xx])
        det = diffeo.jacobian_det(diffeo.Transform(disp=u))
        np.testing.assert_allclose(det[0, 2:-2, 2:-2], 1.21, atol=1e-4)

    def test_translation_det_is_one(self):
        u = _constant_field((14, 14), (2.0, -3.0))
        np.testing.assert_allclose(
            diffeo.jacobian_det(diffeo.Transform(disp=u)), 1.0, atol=1e-6
        )

    def test_fold_detected(self):
        u = np.zeros((2, 16, 16), dtype=np.float32)
        u[1, :, 8] = -3.0  # one collapsed column folds the map
        det = diffeo.jacobian_det(diffeo.Transform(disp=u))
        assert det.min() < 0.0

    def test_small_extent_rejected(self):
        with pytest.raises(ShapeError):
            diffeo.jacobian_det(diffeo.Transform(disp=np.zeros((2, 2, 8), np.float32)))


class TestFoldingStats:
    def test_identity(self):
        det = np.ones((1, 10, 10), np.float32)
        assert diffeo.folding_stats(det) == (0.0, 0.0)

    def test_counting(self):
        det = np.ones(1000, np.float32)
        det[:3] = -0.5
        pct, _ = diffeo.folding_stats(det)
        assert pct == pytest.approx(0.3)


class TestDiffeomorphismProperties:
    @pytest.mark.parametrize("seed", range(8))
    def test_smooth_fields_do_not_fold(self, seed):
        rng = np.random.default_rng(seed)
        v = synth.smooth_velocity(rng, (64, 64), 4.0)
        assert np.abs(v).max() <= 4.0 + 1e-5
        t = diffeo.integrate(v, 7)
        pct, _ = diffeo.folding_stats(diffeo.jacobian_det(t))
        assert pct == 0.0

    @pytest.mark.parametrize("seed", range(8))
    def test_inverse_consistency(self, seed):
        rng = np.random.default_rng(seed)
        v = synth.smooth_velocity(rng, (64, 64), 4.0)
        fwd = diffeo.integrate(v, 7)
        bwd = diffeo.integrate(-v, 7)
        residual = diffeo.compose(fwd, bwd)
        err = interior_epe(residual, np.zeros_like(residual), margin=8)
        mag = np.sqrt((residual.astype(np.float64) ** 2).sum(axis=0))
        assert mag[8:-8, 8:-8].max() <= 0.1, f"seed {seed}: {err}"


def test_compose_shape_check():
    a = diffeo.Transform(disp=np.zeros((2, 8, 8), np.float32))
    b = diffeo.Transform(disp=np.zeros((2, 10, 10), np.float32))
    with pytest.raises(ShapeError):
        diffeo.compose(a, b)
