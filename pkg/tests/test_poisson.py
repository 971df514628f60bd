"""Gradient-domain compositing against a dense direct-solve oracle."""

import numpy as np
import pytest

from depthfuse.errors import DimMismatch, NoConvergence
from depthfuse.gradops import edge_map, sobel
from depthfuse.poisson import (
    FusionMask,
    laplacian,
    mask_from_edges,
    poisson_fuse,
)
from depthfuse.raster import Raster


def dense_poisson_solve(d_low_up, d_high, omega):
    """Reference: assemble the masked 5-point system densely, np.linalg.solve."""
    h, w = d_low_up.shape
    lap_high = laplacian(Raster(d_high)).values
    idx = {(y, x): k for k, (y, x) in enumerate(zip(*np.nonzero(omega)))}
    n = len(idx)
    a = np.zeros((n, n))
    b = np.zeros(n)
    for (y, x), k in idx.items():
        a[k, k] = 4.0
        b[k] = lap_high[y, x]
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if (ny, nx) in idx:
                a[k, idx[(ny, nx)]] = -1.0
            else:
                b[k] += d_low_up[ny, nx]
    u = np.linalg.solve(a, b)
    out = d_low_up.copy()
    for (y, x), k in idx.items():
        out[y, x] = u[k]
    return out


def _random_instance(rng, h, w, density=0.4):
    d_low = rng.random((h, w))
    d_high = rng.random((h, w))
    omega = rng.random((h, w)) < density
    return d_low, d_high, FusionMask(omega)


class TestFusionMask:
    def test_border_ring_cleared(self):
        m = FusionMask(np.ones((5, 5), dtype=bool))
        assert not m.mask[0].any() and not m.mask[-1].any()
        assert not m.mask[:, 0].any() and not m.mask[:, -1].any()
        assert m.count() == 9

    def test_rejects_non_2d(self):
        with pytest.raises(DimMismatch):
            FusionMask(np.ones((2, 2, 2), dtype=bool))


class TestLaplacian:
    def test_constant_is_zero(self):
        lap = laplacian(Raster.constant(5, 5, 3.0))
        np.testing.assert_allclose(lap.values, 0.0, atol=1e-15)

    def test_linear_ramp_is_zero_inside(self):
        ramp = np.outer(np.arange(6.0), np.ones(6)) + np.arange(6.0)
        lap = laplacian(Raster(ramp))
        np.testing.assert_allclose(lap.values[1:-1, 1:-1], 0.0, atol=1e-12)


class TestMaskFromEdges:
    def test_dilation_grows_chebyshev(self):
        img = np.zeros((9, 9))
        img[:, 4:] = 1.0
        e = edge_map(sobel(Raster(img)), 0.15)
        m0 = mask_from_edges(e, 0)
        m2 = mask_from_edges(e, 2)
        assert m2.count() > m0.count()
        assert (m2.mask | m0.mask).sum() == m2.count()  # superset

    def test_negative_radius_rejected(self):
        e = edge_map(sobel(Raster(np.zeros((5, 5)))), 0.15)
        with pytest.raises(ValueError):
            mask_from_edges(e, -1)


class TestPoissonFuse:
    def test_empty_mask_is_bit_exact_identity(self):
        rng = np.random.default_rng(0)
        d_low = Raster(rng.random((8, 8)))
        d_high = Raster(rng.random((8, 8)))
        omega = FusionMask(np.zeros((8, 8), dtype=bool))
        out = poisson_fuse(d_low, d_high, omega)
        np.testing.assert_array_equal(out.values, d_low.values)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(1)
        for h, w in ((8, 8), (10, 12), (16, 16)):
            d_low, d_high, omega = _random_instance(rng, h, w)
            if omega.count() == 0:
                continue
            out = poisson_fuse(Raster(d_low), Raster(d_high), omega)
            ref = dense_poisson_solve(d_low, d_high, omega.mask)
            np.testing.assert_allclose(out.values, ref, atol=1e-8)

    def test_constant_offset_invariance(self):
        # adding a constant to both inputs shifts the output by that constant
        rng = np.random.default_rng(2)
        d_low, d_high, omega = _random_instance(rng, 12, 12)
        base = poisson_fuse(Raster(d_low), Raster(d_high), omega)
        shifted = poisson_fuse(Raster(d_low + 5.0), Raster(d_high + 5.0), omega)
        np.testing.assert_allclose(shifted.values, base.values + 5.0,
                                   atol=1e-7)

    def test_identical_inputs_fixed_point(self):
        rng = np.random.default_rng(3)
        d = rng.random((10, 10))
        omega = FusionMask(rng.random((10, 10)) < 0.5)
        out = poisson_fuse(Raster(d), Raster(d), omega)
        np.testing.assert_allclose(out.values, d, atol=1e-7)

    def test_dirichlet_values_untouched(self):
        rng = np.random.default_rng(4)
        d_low, d_high, omega = _random_instance(rng, 12, 12)
        out = poisson_fuse(Raster(d_low), Raster(d_high), omega)
        outside = ~omega.mask
        np.testing.assert_array_equal(out.values[outside], d_low[outside])

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            poisson_fuse(Raster(np.zeros((4, 4))), Raster(np.zeros((5, 5))),
                         FusionMask(np.zeros((4, 4), dtype=bool)))

    def test_no_convergence_raises(self):
        rng = np.random.default_rng(5)
        d_low, d_high, omega = _random_instance(rng, 16, 16, density=0.9)
        with pytest.raises(NoConvergence):
            poisson_fuse(Raster(d_low), Raster(d_high), omega, max_iter=1)
