"""Backend agreement and kernel-level oracles.

The compiled and numpy lanes must agree to machine precision; the numpy lane
itself is checked against naive per-pixel reference implementations.
"""

import numpy as np
import pytest

from depthfuse import kernels

numpy_impl = kernels.get_impl("numpy")

try:
    cython_impl = kernels.get_impl("cython")
except ImportError:  # pragma: no cover - build environments without the ext
    cython_impl = None

needs_cython = pytest.mark.skipif(cython_impl is None,
                                  reason="compiled extension not built")


def naive_box_filter(img, radius):
    h, w = img.shape
    out = np.empty_like(img)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - radius), min(h, y + radius + 1)
            x0, x1 = max(0, x - radius), min(w, x + radius + 1)
            out[y, x] = img[y0:y1, x0:x1].mean()
    return out


def naive_resize(img, new_h, new_w):
    h, w = img.shape
    out = np.empty((new_h, new_w))
    for oy in range(new_h):
        py = min(max((oy + 0.5) * h / new_h - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(py))
        y1 = min(y0 + 1, h - 1)
        fy = py - y0
        for ox in range(new_w):
            px = min(max((ox + 0.5) * w / new_w - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(px))
            x1 = min(x0 + 1, w - 1)
            fx = px - x0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[oy, ox] = top * (1 - fy) + bot * fy
    return out


def naive_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, co, ho, wo))
    for bn in range(n):
        for o in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    patch = xp[bn, :, oy * stride:oy * stride + kh,
                               ox * stride:ox * stride + kw]
                    out[bn, o, oy, ox] = (patch * w[o]).sum() + b[o]
    return out


class TestNumpyLaneOracles:
    def test_box_filter_matches_naive(self):
        rng = np.random.default_rng(0)
        img = rng.random((13, 17))
        for radius in (1, 2, 5):
            np.testing.assert_allclose(numpy_impl.box_filter(img, radius),
                                       naive_box_filter(img, radius),
                                       atol=1e-12)

    def test_box_filter_constant_is_identity(self):
        img = np.full((9, 9), 3.25)
        np.testing.assert_allclose(numpy_impl.box_filter(img, 2), img,
                                   atol=1e-12)

    def test_resize_matches_naive(self):
        rng = np.random.default_rng(1)
        img = rng.random((11, 7))
        np.testing.assert_allclose(numpy_impl.resize_bilinear(img, 23, 17),
                                   naive_resize(img, 23, 17), atol=1e-12)

    def test_resize_identity(self):
        rng = np.random.default_rng(2)
        img = rng.random((8, 8))
        np.testing.assert_allclose(numpy_impl.resize_bilinear(img, 8, 8), img,
                                   atol=1e-12)

    def test_conv2d_matches_naive(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 7, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        for stride, pad in ((1, 0), (1, 1), (2, 1)):
            np.testing.assert_allclose(
                numpy_impl.conv2d_forward(x, w, b, stride, pad),
                naive_conv2d(x, w, b, stride, pad), atol=1e-12)

    def test_sobel_flat_is_zero(self):
        gx, gy = numpy_impl.sobel(np.full((6, 6), 2.0))
        assert np.all(gx == 0.0) and np.all(gy == 0.0)

    def test_sobel_vertical_step(self):
        img = np.zeros((8, 8))
        img[:, 4:] = 1.0
        gx, gy = numpy_impl.sobel(img)
        # the x-gradient peaks on the two columns flanking the step
        assert gx[3, 3] == 4.0 and gx[3, 4] == 4.0
        np.testing.assert_allclose(gy, 0.0, atol=1e-12)


@needs_cython
class TestBackendAgreement:
    def test_all_kernels_agree(self):
        rng = np.random.default_rng(7)
        img = rng.random((19, 23))
        for radius in (1, 3, 6):
            np.testing.assert_allclose(cython_impl.box_filter(img, radius),
                                       numpy_impl.box_filter(img, radius),
                                       atol=1e-12)
        for a, b in zip(cython_impl.sobel(img), numpy_impl.sobel(img)):
            np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(cython_impl.resize_bilinear(img, 9, 31),
                                   numpy_impl.resize_bilinear(img, 9, 31),
                                   atol=1e-12)

    def test_conv_agrees(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 3, 8, 9))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        for stride, pad in ((1, 0), (1, 1), (2, 1)):
            f_ref = numpy_impl.conv2d_forward(x, w, b, stride, pad)
            f_cy = cython_impl.conv2d_forward(x, w, b, stride, pad)
            np.testing.assert_allclose(f_cy, f_ref, atol=1e-12)
            g = rng.normal(size=f_ref.shape)
            for a, c in zip(cython_impl.conv2d_backward(g, x, w, stride, pad),
                            numpy_impl.conv2d_backward(g, x, w, stride, pad)):
                np.testing.assert_allclose(a, c, atol=1e-12)

    def test_readonly_input_accepted(self):
        img = np.random.default_rng(9).random((6, 6))
        img.flags.writeable = False
        cython_impl.box_filter(img, 1)
        cython_impl.sobel(img)
        cython_impl.resize_bilinear(img, 3, 3)

    def test_backend_env_override(self):
        assert kernels.backend_name in ("numpy", "cython")
        with pytest.raises(ValueError):
            kernels.get_impl("other")
