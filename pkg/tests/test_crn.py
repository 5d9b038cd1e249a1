import numpy as np
import pytest

from lapreg import autodiff as ad
from lapreg import crn, diffeo, similarity, synth
from lapreg.errors import ShapeError


def _zeroed(params):
    for _, node in params.named_tensors():
        node.value[...] = 0.0
    return params


def _rng():
    return np.random.default_rng(0)


class TestCrnForward:
    def test_zero_parameters_zero_velocity(self):
        params = _zeroed(crn.init_crn(_rng(), 2, c_in=2, channels=8, blocks=2))
        x = np.random.default_rng(1).standard_normal((2, 32, 32)).astype(np.float32)
        v, hidden = crn.crn_forward(params, x)
        assert not v.value.any()
        assert v.value.shape == (2, 32, 32)

    def test_shape_contract_full_size(self):
        params = crn.init_crn(_rng(), 2, c_in=2, channels=28, blocks=5)
        x = np.random.default_rng(1).standard_normal((2, 64, 64)).astype(np.float32)
        v, hidden = crn.crn_forward(params, x)
        assert v.value.shape == (2, 64, 64)
        assert hidden.value.shape == (28, 64, 64)

    def test_odd_extents_rejected(self):
        params = crn.init_crn(_rng(), 2, c_in=2, channels=8, blocks=1)
        with pytest.raises(ShapeError, match="even"):
            crn.crn_forward(params, np.zeros((2, 31, 32), np.float32))

    def test_wrong_channels_rejected(self):
        params = crn.init_crn(_rng(), 2, c_in=2, channels=8, blocks=1)
        with pytest.raises(ShapeError, match="channels"):
            crn.crn_forward(params, np.zeros((4, 32, 32), np.float32))

    def test_output_conv_followed_only_by_softsign(self):
        params = crn.init_crn(_rng(), 2, c_in=2, channels=8, blocks=2)
        x = np.random.default_rng(2).standard_normal((2, 16, 16)).astype(np.float32)
        v, _ = crn.crn_forward(params, x)
        # walk down: scale <- softsign <- conv, with no activation between
        assert v.op == "scale"
        softsign = v.parents[0]
        assert softsign.op == "softsign"
        assert softsign.parents[0].op == "conv"

    def test_velocity_bounded_by_scale(self):
        params = crn.init_crn(_rng(), 2, c_in=2, channels=8, blocks=2)
        x = (np.random.default_rng(3).standard_normal((2, 16, 16)) * 10).astype(np.float32)
        v, _ = crn.crn_forward(params, x, vel_scale=0.4)
        assert np.abs(v.value).max() < 0.4

    def test_parameter_count_closed_form(self):
        rank, c, r = 2, 28, 5
        c_in = 2
        params = crn.init_crn(_rng(), rank, c_in=c_in, channels=c, blocks=r)
        k = 3**rank
        conv_cost = lambda ci, co, kk: co * ci * kk + co
        expected = (
            conv_cost(c_in, c, k)                # encoder conv 1
            + conv_cost(c, c, k)                 # encoder conv 2
            + conv_cost(c, c, k)                 # stride-2 conv
            + 2 * r * conv_cost(c, c, k)         # residual blocks
            + conv_cost(c, c, 4**rank)           # transpose conv
            + 2 * conv_cost(c, c, k)             # decoder convs
            + conv_cost(c, rank, k)              # output conv
        )
        assert crn.parameter_count(params) == expected


class TestLapirnForward:
    def test_zero_parameters_identity(self):
        params = crn.init_lapirn(_rng(), 2, levels=3, channels=8, blocks=1)
        _zeroed(params)
        rng = np.random.default_rng(4)
        fixed = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        moving = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        results = crn.lapirn_forward(params, fixed, moving)
        for res in results:
            assert not res.velocity.value.any()
            assert not res.transform.disp_array.any()
        np.testing.assert_array_equal(results[-1].warped.value, moving)

    def test_level_shape_trace(self):
        params = crn.init_lapirn(_rng(), 2, levels=3, channels=8, blocks=1)
        rng = np.random.default_rng(5)
        fixed = rng.uniform(0, 1, (1, 64, 64)).astype(np.float32)
        moving = rng.uniform(0, 1, (1, 64, 64)).astype(np.float32)
        results = crn.lapirn_forward(params, fixed, moving)
        assert [r.velocity.value.shape for r in results] == [
            (2, 16, 16), (2, 32, 32), (2, 64, 64)
        ]
        for r in results:
            assert r.transform.disp_array.shape == r.velocity.value.shape
            assert r.fixed.value.shape[1:] == r.velocity.value.shape[1:]

    def test_indivisible_extents_rejected(self):
        params = crn.init_lapirn(_rng(), 2, levels=3, channels=8, blocks=1)
        bad = np.zeros((1, 36, 64), np.float32)
        with pytest.raises(ShapeError, match="divisible"):
            crn.lapirn_forward(params, bad, bad)

    def test_default_depth_is_three(self):
        params = crn.init_lapirn(_rng(), 2)
        assert len(params.levels) == 3

    def test_gradient_reaches_every_level(self):
        params = crn.init_lapirn(_rng(), 2, levels=3, channels=8, blocks=1)
        rng = np.random.default_rng(6)
        fixed = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        moving = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        results = crn.lapirn_forward(params, fixed, moving)
        final = results[-1]
        loss = similarity.level_loss(
            final.fixed, final.warped, final.velocity, 3, similarity.LossConfig()
        )
        ad.backward(loss)
        for i, level in enumerate(params.levels):
            got = any(
                node.grad is not None and np.abs(node.grad).sum() > 0
                for _, node in level.named_tensors()
            )
            assert got, f"no gradient reached level {i + 1}"

    def test_frozen_levels_receive_no_gradient(self):
        params = crn.init_lapirn(_rng(), 2, levels=2, channels=8, blocks=1)
        params.levels[0].set_trainable(False)
        rng = np.random.default_rng(7)
        fixed = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        moving = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        results = crn.lapirn_forward(params, fixed, moving)
        final = results[-1]
        loss = similarity.level_loss(
            final.fixed, final.warped, final.velocity, 2,
            similarity.LossConfig(levels=2),
        )
        ad.backward(loss)
        assert all(node.grad is None for _, node in params.levels[0].named_tensors())
        assert any(node.grad is not None for _, node in params.levels[1].named_tensors())

    def test_displacement_mode_skips_integration(self, monkeypatch):
        calls = {"n": 0}
        orig = diffeo.integrate

        def counting(v, timesteps=diffeo.DEFAULT_TIMESTEPS):
            calls["n"] += 1
            return orig(v, timesteps)

        monkeypatch.setattr(diffeo, "integrate", counting)
        rng = np.random.default_rng(8)
        fixed = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        moving = rng.uniform(0, 1, (1, 32, 32)).astype(np.float32)
        params = crn.init_lapirn(_rng(), 2, levels=2, channels=8, blocks=1,
                                 mode=diffeo.DISPLACEMENT)
        crn.lapirn_forward(params, fixed, moving)
        assert calls["n"] == 0
        params = crn.init_lapirn(_rng(), 2, levels=2, channels=8, blocks=1)
        crn.lapirn_forward(params, fixed, moving)
        assert calls["n"] == 2

    def test_translation_equivariance_smoke(self):
        # same pair circularly shifted by a coarse-grid-aligned amount:
        # interior registration quality should not depend on position
        rng = np.random.default_rng(9)
        params = crn.init_lapirn(rng, 2, levels=2, channels=8, blocks=2)
        pair = synth.synth_pair(21, (64, 64), 2.0)
        shift = 16

        def interior_ncc(f, m, roll):
            fr = np.roll(f, roll, axis=(1, 2))
            mr = np.roll(m, roll, axis=(1, 2))
            res = crn.lapirn_forward(params, fr, mr)
            warped = np.roll(res[-1].warped.value, -roll, axis=(1, 2))
            crop = (slice(None), slice(20, -20), slice(20, -20))
            return ad.scalar(similarity.local_ncc(
                np.ascontiguousarray(f[crop]), np.ascontiguousarray(warped[crop]), 3
            ))

        base = interior_ncc(pair.fixed, pair.moving, 0)
        shifted = interior_ncc(pair.fixed, pair.moving, shift)
        assert abs(base - shifted) <= 1e-3


def test_reintegrate_flag_changes_prewarp_only_slightly():
    rng = np.random.default_rng(11)
    params = crn.init_lapirn(rng, 2, levels=2, channels=8, blocks=1)
    gen = np.random.default_rng(12)
    fixed = gen.uniform(0, 1, (1, 32, 32)).astype(np.float32)
    moving = gen.uniform(0, 1, (1, 32, 32)).astype(np.float32)
    plain = crn.lapirn_forward(params, fixed, moving)
    re = crn.lapirn_forward(params, fixed, moving, reintegrate=True)
    diff = np.abs(plain[-1].warped.value - re[-1].warped.value).max()
    assert diff < 0.1
