"""Vectorized numpy implementations of the hot kernels.

These are the reference/fallback lane; the Cython extension implements the
same signatures with explicit loops. All arrays are float64 and C-contiguous.
"""

import numpy as np

BACKEND = "numpy"

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T.copy()


def box_filter(img, radius):
    """Mean over the border-clipped (2r+1)^2 window, via an integral image."""
    h, w = img.shape
    ii = np.zeros((h + 1, w + 1))
    np.cumsum(img, axis=0, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    y0 = np.clip(np.arange(h) - radius, 0, None)
    y1 = np.clip(np.arange(h) + radius + 1, None, h)
    x0 = np.clip(np.arange(w) - radius, 0, None)
    x1 = np.clip(np.arange(w) + radius + 1, None, w)
    sums = (ii[np.ix_(y1, x1)] - ii[np.ix_(y0, x1)]
            - ii[np.ix_(y1, x0)] + ii[np.ix_(y0, x0)])
    area = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return sums / area


def sobel(img):
    """3x3 Sobel gradients with clamp-to-edge borders. Returns (gx, gy)."""
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(3):
        for j in range(3):
            win = p[i:i + h, j:j + w]
            if _SOBEL_X[i, j] != 0.0:
                gx += _SOBEL_X[i, j] * win
            if _SOBEL_Y[i, j] != 0.0:
                gy += _SOBEL_Y[i, j] * win
    return gx, gy


def _sample_axis(n_in, n_out):
    # pixel-center mapping, clamped to the valid range (clamp-to-edge)
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def resize_bilinear(img, new_h, new_w):
    h, w = img.shape
    y0, y1, fy = _sample_axis(h, new_h)
    x0, x1, fx = _sample_axis(w, new_w)
    rows = img[y0] * (1.0 - fy)[:, None] + img[y1] * fy[:, None]
    out = rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]
    return out


def _conv_out_dims(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _im2col(xp, kh, kw, ho, wo, stride):
    """(n, c, hp, wp) padded input -> (n, c*kh*kw, ho*wo) patch matrix."""
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + ho * stride:stride,
                                  j:j + wo * stride:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(gcols, shape_p, kh, kw, ho, wo, stride):
    """Scatter-add transpose of _im2col."""
    n, c = shape_p[0], shape_p[1]
    g = gcols.reshape(n, c, kh, kw, ho, wo)
    gxp = np.zeros(shape_p)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + ho * stride:stride,
                j:j + wo * stride:stride] += g[:, :, i, j]
    return gxp


def conv2d_forward(x, weight, bias, stride, pad):
    """NCHW convolution (cross-correlation) with zero padding.

    im2col + one batched GEMM, so the heavy lifting happens in BLAS.
    """
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    ho, wo = _conv_out_dims(h, w, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw, ho, wo, stride)
    out = np.matmul(weight.reshape(co, -1), cols)  # (n, co, ho*wo)
    out += bias[None, :, None]
    return np.ascontiguousarray(out.reshape(n, co, ho, wo))


def conv2d_backward(grad_out, x, weight, stride, pad):
    """Gradients of conv2d_forward w.r.t. (x, weight, bias)."""
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw, ho, wo, stride)
    g2 = grad_out.reshape(n, co, ho * wo)
    gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    gcols = np.matmul(weight.reshape(co, -1).T, g2)
    gxp = _col2im(gcols, xp.shape, kh, kw, ho, wo, stride)
    gx = gxp[:, :, pad:pad + h, pad:pad + w]
    gb = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gx), gw, gb
