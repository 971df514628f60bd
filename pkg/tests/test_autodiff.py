"""Reverse-mode autodiff: per-op finite-difference checks and graph plumbing."""

import numpy as np
import pytest

from depthfuse import autodiff as ad
from depthfuse.errors import BackwardBeforeForward, ShapeMismatch

OP_TOL = 1e-6


def rand(*shape, seed=0, scale=1.0):
    return ad.Tensor(np.random.default_rng(seed).standard_normal(shape) * scale)


class TestTensorBasics:
    def test_data_is_float64_contiguous(self):
        t = ad.Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert t.data.dtype == np.float64
        assert t.data.flags["C_CONTIGUOUS"]

    def test_backward_requires_scalar(self):
        t = ad.Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        with pytest.raises(ShapeMismatch):
            ad.backward(ad.add(t, t))

    def test_backward_requires_tracked_graph(self):
        t = ad.Tensor(np.zeros((1, 1, 1, 1)))
        with pytest.raises(BackwardBeforeForward):
            ad.backward(ad.mean_all(t))

    def test_grad_accumulates_across_uses(self):
        t = ad.Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        out = ad.mean_all(ad.add(t, t))
        ad.backward(out)
        np.testing.assert_allclose(t.grad, 2.0 / t.data.size)


class TestOpGradients:
    def test_conv2d(self):
        x = rand(1, 2, 6, 6, seed=1)
        w = rand(3, 2, 3, 3, seed=2, scale=0.5)
        b = rand(3, seed=3)
        err = ad.grad_check(
            lambda x, w, b: ad.mean_all(ad.conv2d(x, w, b, stride=1, pad=1)),
            [x, w, b])
        assert err <= OP_TOL

    def test_conv2d_strided(self):
        x = rand(2, 1, 8, 8, seed=4)
        w = rand(2, 1, 3, 3, seed=5, scale=0.5)
        b = rand(2, seed=6)
        err = ad.grad_check(
            lambda x, w, b: ad.mean_all(ad.conv2d(x, w, b, stride=2, pad=1)),
            [x, w, b])
        assert err <= OP_TOL

    def test_conv2d_shape_validation(self):
        x = ad.Tensor(np.zeros((1, 2, 4, 4)))
        w = ad.Tensor(np.zeros((3, 1, 3, 3)))
        b = ad.Tensor(np.zeros(3))
        with pytest.raises(ShapeMismatch):
            ad.conv2d(x, w, b)

    def test_upsample_bilinear2x(self):
        x = rand(1, 2, 5, 4, seed=7)
        err = ad.grad_check(lambda x: ad.mean_all(ad.upsample_bilinear2x(x)),
                            [x])
        assert err <= OP_TOL

    def test_upsample_transpose_exact(self):
        # <Ax, y> == <x, A^T y> for the separable 2x kernel
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 1, 6, 5))
        y = rng.standard_normal((1, 1, 12, 10))
        ax = ad._up2x_last(ad._up2x_last(x.swapaxes(2, 3)).swapaxes(2, 3))
        aty = ad._up2x_last_t(
            np.ascontiguousarray(
                ad._up2x_last_t(np.ascontiguousarray(y.swapaxes(2, 3)))
                .swapaxes(2, 3)))
        assert np.vdot(ax, y) == pytest.approx(np.vdot(x, aty), rel=1e-12)

    def test_avgpool2x(self):
        x = rand(1, 3, 6, 6, seed=9)
        err = ad.grad_check(lambda x: ad.mean_all(ad.avgpool2x(x)), [x])
        assert err <= OP_TOL

    def test_avgpool_odd_dims_rejected(self):
        with pytest.raises(ShapeMismatch):
            ad.avgpool2x(ad.Tensor(np.zeros((1, 1, 5, 6))))

    def test_add_concat_lrelu_scalar_mul(self):
        x = rand(1, 2, 4, 4, seed=10)
        y = rand(1, 2, 4, 4, seed=11)

        def f(x, y):
            s = ad.add(x, y)
            c = ad.concat_channels(s, ad.scalar_mul(x, -1.7))
            return ad.mean_all(ad.leaky_relu(c))

        assert ad.grad_check(f, [x, y]) <= OP_TOL

    def test_custom_op_routes_gradients(self):
        x = ad.Tensor(np.array([[[[2.0]]]]), requires_grad=True)
        out = ad.custom_op(x.data ** 3, [x], [lambda g: g * 3 * x.data ** 2])
        ad.backward(out)
        np.testing.assert_allclose(x.grad, 12.0)


class TestGradCheckSelf:
    def test_detects_wrong_gradient(self):
        x = ad.Tensor(np.array([[[[1.5]]]]), requires_grad=True)

        def bad(x):
            return ad.custom_op(x.data * 4.0, [x], [lambda g: g * 3.0])

        assert ad.grad_check(bad, [x]) > 0.1
