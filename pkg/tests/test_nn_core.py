import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctstreak.nn.core import (
    Activation,
    AdamState,
    ConvLayerParams,
    activation,
    activation_backward,
    adam_step,
    dilated_conv2d,
    dilated_conv2d_backward,
    grad_check,
    mse_loss,
    uniform_init,
)

from oracles import adam_reference, conv_oracle


class TestConv:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_delta_kernel(self, rng, d):
        x = rng.standard_normal((2, 1, 6, 7))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(dilated_conv2d(x, ConvLayerParams(k, np.zeros(1), d)), x)

    def test_dilated_footprint(self):
        x = np.zeros((1, 1, 7, 7))
        x[0, 0, 3, 3] = 1.0
        out = dilated_conv2d(x, ConvLayerParams(np.ones((1, 1, 3, 3)), np.zeros(1), 2))[0, 0]
        expected = np.zeros((7, 7))
        expected[1::2, 1::2][:3, :3] = 1.0
        np.testing.assert_array_equal(out, expected)
        assert out.sum() == 9

    def test_against_oracle(self, rng):
        x = rng.standard_normal((1, 2, 5, 5))
        p = ConvLayerParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3), 1)
        assert np.max(np.abs(dilated_conv2d(x, p) - conv_oracle(x, p.kernel, p.bias, 1))) < 1e-10

    @given(
        st.integers(1, 4), st.integers(1, 4), st.integers(1, 9), st.integers(1, 9),
        st.integers(1, 3), st.sampled_from([1, 3]), st.integers(0, 2**31),
    )
    @settings(max_examples=40, deadline=None)
    def test_random_sweep(self, cin, cout, h, w, d, k, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((2, cin, h, w))
        p = ConvLayerParams(r.standard_normal((cout, cin, k, k)), r.standard_normal(cout), d)
        assert np.max(np.abs(dilated_conv2d(x, p) - conv_oracle(x, p.kernel, p.bias, d))) < 1e-10

    def test_no_bias(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        k = rng.standard_normal((1, 1, 3, 3))
        np.testing.assert_allclose(dilated_conv2d(x, ConvLayerParams(k)), conv_oracle(x, k, None, 1), atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError):
            dilated_conv2d(rng.standard_normal((1, 2, 4, 4)), ConvLayerParams(np.zeros((1, 3, 3, 3))))

    @pytest.mark.parametrize("shape", [(1, 1, 5, 5), (1, 1, 2, 3, 3)])
    def test_bad_kernels(self, shape):
        with pytest.raises(ValueError):
            ConvLayerParams(np.zeros(shape))

    def test_bad_dilation_and_bias(self):
        with pytest.raises(ValueError):
            ConvLayerParams(np.zeros((1, 1, 3, 3)), dilation=0)
        with pytest.raises(ValueError):
            ConvLayerParams(np.zeros((2, 1, 3, 3)), np.zeros(3))


class TestConvBackward:
    def test_zero_upstream(self, rng):
        x = rng.standard_normal((2, 2, 5, 5))
        p = ConvLayerParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3), 2)
        gx, gk, gb = dilated_conv2d_backward(x, p, np.zeros((2, 3, 5, 5)))
        assert not gx.any() and not gk.any() and not gb.any()

    def test_bias_grad_is_channel_sum(self, rng):
        x = rng.standard_normal((2, 1, 4, 4))
        p = ConvLayerParams(rng.standard_normal((2, 1, 3, 3)), np.zeros(2))
        up = rng.standard_normal((2, 2, 4, 4))
        np.testing.assert_allclose(dilated_conv2d_backward(x, p, up)[2], up.sum(axis=(0, 2, 3)))

    @pytest.mark.parametrize("d", [1, 2])
    def test_finite_differences(self, rng, d):
        x = rng.standard_normal((1, 1, 4, 4))
        k = rng.standard_normal((1, 1, 3, 3))
        b = rng.standard_normal(1)
        up = rng.standard_normal((1, 1, 4, 4))

        def f_x(v):
            return float(np.sum(up * dilated_conv2d(v, ConvLayerParams(k, b, d))))

        def f_k(v):
            return float(np.sum(up * dilated_conv2d(x, ConvLayerParams(v, b, d))))

        def f_b(v):
            return float(np.sum(up * dilated_conv2d(x, ConvLayerParams(k, v, d))))

        gx, gk, gb = dilated_conv2d_backward(x, ConvLayerParams(k, b, d), up)
        assert grad_check(f_x, x, gx) < 1e-6
        assert grad_check(f_k, k, gk) < 1e-6
        assert grad_check(f_b, b, gb) < 1e-6

    def test_multichannel_fd(self, rng):
        x = rng.standard_normal((2, 3, 5, 6))
        p = ConvLayerParams(rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2), 3)
        up = rng.standard_normal((2, 2, 5, 6))
        gx, gk, _ = dilated_conv2d_backward(x, p, up)
        assert grad_check(lambda v: float(np.sum(up * dilated_conv2d(v, p))), x, gx) < 1e-6
        f = lambda v: float(np.sum(up * dilated_conv2d(x, ConvLayerParams(v, p.bias, 3))))
        assert grad_check(f, p.kernel, gk) < 1e-6

    def test_shape_mismatch(self, rng):
        p = ConvLayerParams(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ValueError):
            dilated_conv2d_backward(np.zeros((1, 1, 4, 4)), p, np.zeros((1, 1, 4, 5)))


class TestActivations:
    def test_values(self):
        assert activation(np.array([-1.0, 2.0]), Activation.RELU).tolist() == [0.0, 2.0]
        assert activation(np.array([0.0]), "sigmoid")[0] == 0.5
        assert activation(np.array([0.0]), "tanh")[0] == 0.0

    def test_derivatives_at_zero(self):
        one = np.ones(1)
        assert activation_backward(np.zeros(1), one, "sigmoid")[0] == 0.25
        assert activation_backward(np.zeros(1), one, "tanh")[0] == 1.0

    def test_sigmoid_stable(self):
        out = activation(np.array([-800.0, 800.0]), "sigmoid")
        assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0

    @pytest.mark.parametrize("kind", list(Activation))
    def test_fd(self, rng, kind):
        x = rng.standard_normal(20)
        x = x[np.abs(x) > 1e-3]  # keep away from the ReLU kink
        up = rng.standard_normal(x.shape)
        g = activation_backward(x, up, kind)
        assert grad_check(lambda v: float(np.sum(up * activation(v, kind))), x, g) < 1e-7


class TestMSE:
    def test_identical(self, rng):
        a = rng.random((2, 1, 4, 4))
        loss, g = mse_loss(a, a)
        assert loss == 0.0 and not g.any()

    def test_constant_offset(self):
        loss, _ = mse_loss(np.full((3, 1, 5, 5), 0.5), np.zeros((3, 1, 5, 5)))
        assert loss == 0.25

    def test_five_d_normalization(self, rng):
        o, t = rng.random((2, 2, 4, 1, 3, 3))
        loss, _ = mse_loss(o, t)
        assert loss == pytest.approx(np.sum((o - t) ** 2) / (2 * 4 * 3 * 3))

    def test_fd(self, rng):
        o, t = rng.random((2, 2, 1, 8, 8))
        _, g = mse_loss(o, t)
        assert grad_check(lambda v: mse_loss(v, t)[0], o, g) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


class TestAdam:
    def test_defaults(self):
        s = AdamState()
        assert (s.lr, s.beta1, s.beta2, s.epsilon, s.step_count) == (1e-4, 0.9, 0.999, 1e-8, 0)

    def test_first_step_is_signed_lr(self):
        params = {"w": np.array([1.0, 1.0])}
        adam_step(params, {"w": np.array([3.0, -0.2])}, AdamState(lr=0.01))
        np.testing.assert_allclose(params["w"], [0.99, 1.01], atol=1e-8)

    def test_zero_gradient_fixed_point(self):
        params = {"w": np.array([0.3, -2.0])}
        state = AdamState()
        adam_step(params, {"w": np.zeros(2)}, state)
        assert params["w"].tolist() == [0.3, -2.0] and state.step_count == 1

    def test_three_step_reference(self):
        gs = [0.7, -1.3, 0.05]
        params = {"w": np.array([0.4])}
        state = AdamState(lr=0.05)
        for g in gs:
            adam_step(params, {"w": np.array([g])}, state)
        assert params["w"][0] == pytest.approx(adam_reference(0.4, gs, lr=0.05), abs=1e-12)
        assert state.m["w"].shape == state.v["w"].shape == (1,)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"q": np.zeros(2)}, AdamState())

    def test_negative_step_count(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, AdamState(step_count=-1))

    def test_state_tensor_roundtrip(self):
        params = {"a": np.ones(3), "b": np.ones((2, 2))}
        s = AdamState()
        adam_step(params, {"a": np.ones(3), "b": np.full((2, 2), 2.0)}, s)
        back = AdamState.from_tensors(s.state_tensors())
        assert back.step_count == 1
        for k in params:
            np.testing.assert_array_equal(back.m[k], s.m[k])
            np.testing.assert_array_equal(back.v[k], s.v[k])


class TestInit:
    def test_range_and_mean(self):
        x = uniform_init((100_000,), seed=0)
        assert x.min() >= -0.25 and x.max() < 0.25
        assert abs(x.mean()) < 0.005

    def test_deterministic(self):
        assert np.array_equal(uniform_init((3, 3), seed=9), uniform_init((3, 3), seed=9))

    @pytest.mark.parametrize("lo,hi", [(0.0, 0.0), (1.0, -1.0)])
    def test_bad_range(self, lo, hi):
        with pytest.raises(ValueError):
            uniform_init((2,), lo, hi)


class TestGradCheck:
    def test_quadratic(self):
        assert grad_check(lambda v: float(v[0] ** 2), np.array([3.0]), np.array([6.0])) < 1e-10

    def test_detects_wrong_gradient(self):
        assert grad_check(lambda v: float(v[0] ** 2), np.array([3.0]), np.array([5.0])) > 0.1

    def test_directional_mode(self, rng):
        a = rng.standard_normal(50)
        f = lambda v: float(np.sum(np.sin(v) * a))
        x = rng.standard_normal(50)
        assert grad_check(f, x, np.cos(x) * a, n_directions=10) < 1e-8
        assert grad_check(f, x, np.cos(x) * a * 1.1, n_directions=10) > 1e-3
