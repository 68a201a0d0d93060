"""Tests for the reverse-mode array engine.

Every primitive's adjoint is verified against central finite differences;
the spot-check values are closed forms.
"""

import numpy as np
import pytest

from etsfore import autodiff as ad
from etsfore.autodiff import Tensor
from etsfore.errors import ConfigError, DimensionError


def fd_check(f, x, tol=1e-6, eps=1e-5):
    err = ad.grad_check(f, x, eps=eps)
    assert err < tol, f"adjoint vs finite differences: rel err {err}"


class TestLinear:
    def test_identity(self):
        y = ad.linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(y.data, [[1.0, 2.0]])

    def test_zero_weights_give_bias(self):
        y = ad.linear(Tensor([[1.0, 2.0]]), Tensor(np.zeros((2, 2))), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(y.data, [[3.0, 4.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
            ad.linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        W = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=5), requires_grad=True)

        def loss(of):
            return lambda t: ad.tsum(ad.mul(y := ad.linear(*of(t)), y))

        fd_check(loss(lambda t: (t, W, b)), x)
        fd_check(loss(lambda t: (x, t, b)), W)
        fd_check(loss(lambda t: (x, W, t)), b)


class TestConv1dTemporal:
    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(9, 1))
        kernel = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
        out = ad.conv1d_temporal(Tensor(x), Tensor(kernel))
        np.testing.assert_allclose(out.data, x)

    def test_zero_input(self):
        kernel = np.random.default_rng(2).normal(size=(3, 2, 4))
        out = ad.conv1d_temporal(Tensor(np.zeros((6, 2))), Tensor(kernel))
        np.testing.assert_array_equal(out.data, np.zeros((6, 4)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ad.conv1d_temporal(Tensor(np.zeros((4, 1))), Tensor(np.zeros((2, 1, 1))))

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(3)
        for k in (1, 3, 5):
            x = rng.normal(size=(11, 3))
            kernel = rng.normal(size=(k, 3, 2))
            out = ad.conv1d_temporal(Tensor(x), Tensor(kernel)).data
            half = (k - 1) // 2
            expect = np.zeros((11, 2))
            for t in range(11):
                for dt in range(k):
                    src = t + dt - half
                    if 0 <= src < 11:
                        expect[t] += x[src] @ kernel[dt]
            np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(7, 2)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 3)), requires_grad=True)
        fd_check(lambda t: ad.tsum(ad.mul(y := ad.conv1d_temporal(t, k), y)), x)
        fd_check(lambda t: ad.tsum(ad.mul(y := ad.conv1d_temporal(x, t), y)), k)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = ad.layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, np.zeros(3))

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(4, 6)))
        beta = rng.normal(size=6)
        out = ad.layer_norm(x, Tensor(np.zeros(6)), Tensor(beta))
        np.testing.assert_allclose(out.data, np.broadcast_to(beta, (4, 6)))

    def test_output_statistics(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(2.0, 3.0, size=(16,)))
        out = ad.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        assert abs(out.mean()) < 1e-9
        # variance is 1 up to the eps perturbation of the denominator
        assert abs(out.var() - 1.0) < 1e-4

    def test_empty_axis_rejected(self):
        with pytest.raises(DimensionError):
            ad.layer_norm(Tensor(np.zeros((3, 0))), Tensor(np.zeros(0)), Tensor(np.zeros(0)))

    def test_gradients(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
        gamma = Tensor(rng.normal(size=8), requires_grad=True)
        beta = Tensor(rng.normal(size=8), requires_grad=True)
        fd_check(lambda t: ad.tsum(ad.mul(y := ad.layer_norm(t, gamma, beta), y)), x, tol=1e-5)
        fd_check(lambda t: ad.tsum(ad.mul(y := ad.layer_norm(x, t, beta), y)), gamma)
        fd_check(lambda t: ad.tsum(ad.mul(y := ad.layer_norm(x, gamma, t), y)), beta)


class TestSigmoid:
    def test_zero_maps_to_half(self):
        assert ad.sigmoid(Tensor(0.0)).data == 0.5

    def test_derivative_at_zero(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        out = ad.tsum(ad.sigmoid(x))
        out.backward()
        np.testing.assert_allclose(x.grad, 0.25)

    def test_saturation_without_overflow(self):
        out = ad.sigmoid(Tensor([50.0, -50.0])).data
        assert abs(out[0] - 1.0) < 1e-20
        assert abs(out[1]) < 1e-20
        big = ad.sigmoid(Tensor([1e4, -1e4])).data
        assert np.isfinite(big).all()

    def test_gradient(self):
        x = Tensor(np.random.default_rng(8).normal(size=(6,)), requires_grad=True)
        fd_check(lambda t: ad.tsum(ad.sigmoid(t)), x, tol=1e-7)


class TestDropout:
    def test_inference_is_exact_identity(self):
        x = Tensor(np.random.default_rng(9).normal(size=(4, 4)))
        assert ad.dropout(x, 0.5, training=False) is x

    def test_p_zero_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert ad.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x

    def test_bad_rate_rejected(self):
        with pytest.raises(ConfigError):
            ad.dropout(Tensor(np.ones(2)), 1.0, training=True, rng=np.random.default_rng(0))

    def test_survivor_mean_within_binomial_band(self):
        n, p = 100_000, 0.2
        rng = np.random.default_rng(10)
        out = ad.dropout(Tensor(np.ones(n)), p, training=True, rng=rng).data
        # mean of mask/(1-p) has std sqrt(p/((1-p)n))
        band = 3.0 * np.sqrt(p / ((1.0 - p) * n))
        assert abs(out.mean() - 1.0) < band

    def test_gradient_uses_same_mask(self):
        rng = np.random.default_rng(11)
        x = Tensor(np.ones(50), requires_grad=True)
        out = ad.dropout(x, 0.3, training=True, rng=rng)
        ad.tsum(out).backward()
        np.testing.assert_array_equal(x.grad, out.data)


class TestStructuralOps:
    def test_getitem_concat_roundtrip(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
        y = ad.concat([x[..., :2], x[..., 2:]], axis=-1)
        np.testing.assert_array_equal(y.data, x.data)
        fd_check(lambda t: ad.tsum(ad.mul(c := ad.concat([t[..., :2], t[..., 2:]], axis=-1), c)), x)

    def test_cumsum_gradient(self):
        x = Tensor(np.random.default_rng(13).normal(size=(6, 2)), requires_grad=True)
        fd_check(lambda t: ad.tsum(ad.mul(c := ad.cumsum(t, axis=0), c)), x)

    def test_repeat_channels(self):
        x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        out = ad.repeat_channels(x, 3)
        np.testing.assert_array_equal(out.data, [[1, 1, 1, 2, 2, 2]])
        fd_check(lambda t: ad.tsum(ad.mul(r := ad.repeat_channels(t, 3), r)), x)

    def test_pow_outer_values_and_gradient(self):
        base = Tensor(np.array([0.5, 0.25]), requires_grad=True)
        out = ad.pow_outer(base, np.array([0.0, 1.0, 2.0]))
        np.testing.assert_allclose(out.data, [[1, 1], [0.5, 0.25], [0.25, 0.0625]])
        fd_check(lambda t: ad.tsum(ad.mul(p := ad.pow_outer(t, np.arange(4.0)), p)), base)

    def test_broadcast_and_mean_gradients(self):
        x = Tensor(np.random.default_rng(14).normal(size=(1, 3)), requires_grad=True)
        fd_check(lambda t: ad.tmean(ad.mul(b := ad.broadcast_to(t, (4, 5, 3)), b)), x)


class TestGradCheckUtility:
    def test_quadratic_adjoint(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        f = lambda t: ad.tsum(ad.mul(t, t))
        err = ad.grad_check(f, x, eps=1e-5)
        assert err < 1e-8
        x.zero_grad()
        f(x).backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_sigmoid_sum_at_zero(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        err = ad.grad_check(lambda t: ad.tsum(ad.sigmoid(t)), x, eps=1e-5)
        assert err < 1e-8
        np.testing.assert_allclose(x.grad, 0.25)

    def test_randomized_primitives_up_to_32x32(self):
        rng = np.random.default_rng(15)
        x = Tensor(rng.normal(size=(32, 32)), requires_grad=True)
        W = Tensor(rng.normal(size=(32, 8)) / 6)
        fd_check(lambda t: ad.tmean(ad.mul(s := ad.sigmoid(ad.matmul(t, W)), s)), x, tol=1e-4)


class TestDeterminism:
    def test_same_seed_replay_is_bit_identical(self):
        rng_data = np.random.default_rng(16)
        x = rng_data.normal(size=(8, 4))

        def run():
            rng = np.random.default_rng(99)
            t = Tensor(x, requires_grad=True)
            out = ad.tmean(ad.mul(d := ad.dropout(ad.sigmoid(t), 0.4, True, rng), d))
            out.backward()
            return out.data.copy(), t.grad.copy()

        v1, g1 = run()
        v2, g2 = run()
        assert np.array_equal(v1, v2)
        assert np.array_equal(g1, g2)
