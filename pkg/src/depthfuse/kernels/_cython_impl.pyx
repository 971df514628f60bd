# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Mirrors _numpy_impl's signatures; selected at import by depthfuse.kernels.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND = "cython"


def box_filter(const double[:, ::1] img, int radius):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef cnp.ndarray[double, ndim=2] ii_arr = np.zeros((h + 1, w + 1))
    cdef double[:, ::1] ii = ii_arr
    cdef Py_ssize_t y, x
    cdef double rowsum
    for y in range(h):
        rowsum = 0.0
        for x in range(w):
            rowsum += img[y, x]
            ii[y + 1, x + 1] = ii[y, x + 1] + rowsum
    cdef cnp.ndarray[double, ndim=2] out_arr = np.empty((h, w))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y0, y1, x0, x1
    cdef double s, area
    for y in range(h):
        y0 = y - radius
        if y0 < 0:
            y0 = 0
        y1 = y + radius + 1
        if y1 > h:
            y1 = h
        for x in range(w):
            x0 = x - radius
            if x0 < 0:
                x0 = 0
            x1 = x + radius + 1
            if x1 > w:
                x1 = w
            s = ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]
            area = <double>((y1 - y0) * (x1 - x0))
            out[y, x] = s / area
    return out_arr


def sobel(const double[:, ::1] img):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef cnp.ndarray[double, ndim=2] gx_arr = np.empty((h, w))
    cdef cnp.ndarray[double, ndim=2] gy_arr = np.empty((h, w))
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gy = gy_arr
    cdef Py_ssize_t y, x, ym, yp, xm, xp
    cdef double a, b, c, d, e, f, g, i
    for y in range(h):
        ym = y - 1 if y > 0 else 0
        yp = y + 1 if y < h - 1 else h - 1
        for x in range(w):
            xm = x - 1 if x > 0 else 0
            xp = x + 1 if x < w - 1 else w - 1
            a = img[ym, xm]; b = img[ym, x]; c = img[ym, xp]
            d = img[y, xm];                  e = img[y, xp]
            f = img[yp, xm]; g = img[yp, x]; i = img[yp, xp]
            gx[y, x] = (c + 2.0 * e + i) - (a + 2.0 * d + f)
            gy[y, x] = (f + 2.0 * g + i) - (a + 2.0 * b + c)
    return gx_arr, gy_arr


def resize_bilinear(const double[:, ::1] img, Py_ssize_t new_h, Py_ssize_t new_w):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.empty((new_h, new_w))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t oy, ox, y0, y1, x0, x1
    cdef double sy = (<double>h) / new_h
    cdef double sx = (<double>w) / new_w
    cdef double py, px, fy, fx, top, bot
    for oy in range(new_h):
        py = (oy + 0.5) * sy - 0.5
        if py < 0.0:
            py = 0.0
        if py > h - 1.0:
            py = h - 1.0
        y0 = <Py_ssize_t>floor(py)
        if y0 > h - 1:
            y0 = h - 1
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        fy = py - y0
        for ox in range(new_w):
            px = (ox + 0.5) * sx - 0.5
            if px < 0.0:
                px = 0.0
            if px > w - 1.0:
                px = w - 1.0
            x0 = <Py_ssize_t>floor(px)
            if x0 > w - 1:
                x0 = w - 1
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            fx = px - x0
            top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
            out[oy, ox] = top * (1.0 - fy) + bot * fy
    return out_arr


cdef _im2col(const double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
             Py_ssize_t ho, Py_ssize_t wo, int stride, int pad):
    # (n, c, h, w) -> (n, c*kh*kw, ho*wo) patch matrix, zero outside the pad
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef cnp.ndarray[double, ndim=3] cols_arr = np.zeros((n, c * kh * kw, ho * wo))
    cdef double[:, :, ::1] cols = cols_arr
    cdef Py_ssize_t b_, ci, i, j, oy, ox, iy, ix, row
    for b_ in range(n):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(wo):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            cols[b_, row, oy * wo + ox] = x[b_, ci, iy, ix]
    return cols_arr


cdef _col2im(const double[:, :, ::1] gcols, Py_ssize_t n, Py_ssize_t c,
             Py_ssize_t h, Py_ssize_t w, Py_ssize_t kh, Py_ssize_t kw,
             Py_ssize_t ho, Py_ssize_t wo, int stride, int pad):
    # scatter-add transpose of _im2col
    cdef cnp.ndarray[double, ndim=4] gx_arr = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t b_, ci, i, j, oy, ox, iy, ix, row
    for b_ in range(n):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(wo):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            gx[b_, ci, iy, ix] += gcols[b_, row, oy * wo + ox]
    return gx_arr


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] weight,
                   const double[::1] bias, int stride, int pad):
    # patch gather in C, GEMM in BLAS
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t co = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, ho, wo, stride, pad)
    w2 = np.asarray(weight).reshape(co, -1)
    out = np.matmul(w2, cols)
    out += np.asarray(bias)[None, :, None]
    return np.ascontiguousarray(out.reshape(n, co, ho, wo))


def conv2d_backward(const double[:, :, :, ::1] grad_out, const double[:, :, :, ::1] x,
                    const double[:, :, :, ::1] weight, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t co = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    cols = _im2col(x, kh, kw, ho, wo, stride, pad)
    g_arr = np.asarray(grad_out)
    g2 = g_arr.reshape(n, co, ho * wo)
    w2 = np.asarray(weight).reshape(co, -1)
    gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(
        np.asarray(weight).shape)
    gcols = np.ascontiguousarray(np.matmul(w2.T, g2))
    gx = _col2im(gcols, n, c, h, w, kh, kw, ho, wo, stride, pad)
    gb = g_arr.sum(axis=(0, 2, 3))
    return gx, gw, gb
