"""Gradient extraction, edge maps, and guided filtering against naive oracles."""

import numpy as np
import pytest

from depthfuse.errors import DimMismatch, TooSmall
from depthfuse.gradops import (
    box_filter,
    default_guided_radius,
    edge_map,
    guided_filter,
    guided_fuse,
    sobel,
)
from depthfuse.raster import DepthMap, Raster, resize_bilinear


def naive_guided_filter(guide, src, radius, eps):
    """O(r^2)-per-window reference: per-window linear model, then averaging
    of the coefficient maps, computed with explicit window loops."""
    h, w = guide.shape

    def window_mean(img, y, x):
        y0, y1 = max(0, y - radius), min(h, y + radius + 1)
        x0, x1 = max(0, x - radius), min(w, x + radius + 1)
        return img[y0:y1, x0:x1].mean()

    a = np.empty((h, w))
    b = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            mi = window_mean(guide, y, x)
            mp = window_mean(src, y, x)
            corr_ii = window_mean(guide * guide, y, x)
            corr_ip = window_mean(guide * src, y, x)
            var = corr_ii - mi * mi
            cov = corr_ip - mi * mp
            a[y, x] = cov / (var + eps)
            b[y, x] = mp - a[y, x] * mi
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = window_mean(a, y, x) * guide[y, x] + window_mean(b, y, x)
    return out


class TestSobelEdges:
    def test_too_small_raises(self):
        with pytest.raises(TooSmall):
            sobel(Raster(np.zeros((2, 5))))

    def test_magnitude_is_hypot(self):
        rng = np.random.default_rng(0)
        g = sobel(Raster(rng.random((8, 8))))
        np.testing.assert_allclose(g.mag.values,
                                   np.hypot(g.gx.values, g.gy.values),
                                   atol=1e-15)

    def test_edge_map_threshold(self):
        img = np.zeros((8, 8))
        img[:, 4:] = 1.0
        e = edge_map(sobel(Raster(img)), alpha=0.15)
        assert e.count() > 0
        assert e.mask[:, 3].all() and e.mask[:, 4].all()
        assert not e.mask[:, 0].any()

    def test_flat_image_has_empty_edge_map(self):
        e = edge_map(sobel(Raster.constant(6, 6, 3.0)), alpha=0.15)
        assert e.count() == 0

    def test_alpha_bounds(self):
        g = sobel(Raster(np.random.default_rng(1).random((5, 5))))
        for alpha in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError):
                edge_map(g, alpha)


class TestGuidedFilter:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(2)
        guide = rng.random((24, 24))
        src = rng.random((24, 24))
        for radius in (1, 3):
            for eps in (1e-12, 1e-2):
                out = guided_filter(Raster(guide), Raster(src), radius, eps)
                ref = naive_guided_filter(guide, src, radius, eps)
                np.testing.assert_allclose(out.values, ref, atol=1e-10)

    def test_self_guidance_with_large_eps_smooths(self):
        rng = np.random.default_rng(3)
        r = Raster(rng.random((16, 16)))
        out = guided_filter(r, r, 3, 1.0)
        assert out.values.std() < r.values.std()

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            guided_filter(Raster(np.zeros((4, 4))), Raster(np.zeros((5, 4))),
                          1, 1e-6)

    def test_parameter_validation(self):
        r = Raster(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            guided_filter(r, r, 0, 1e-6)
        with pytest.raises(ValueError):
            guided_filter(r, r, 1, 0.0)

    def test_box_filter_raster_wrapper(self):
        rng = np.random.default_rng(4)
        r = Raster(rng.random((7, 7)))
        np.testing.assert_allclose(box_filter(r, 2).values.mean(),
                                   r.values.mean(), atol=0.05)


class TestGuidedFuse:
    def test_default_radius_rule(self):
        assert default_guided_radius(192) == 16
        assert default_guided_radius(12) == 1
        assert default_guided_radius(5) == 1  # floored at 1

    def test_output_at_high_dims(self):
        rng = np.random.default_rng(5)
        low = DepthMap(Raster(rng.random((16, 16))))
        high = DepthMap(Raster(rng.random((48, 48))))
        fused = guided_fuse(low, high)
        assert fused.raster.shape == (48, 48)

    def test_high_smaller_than_low_rejected(self):
        low = DepthMap(Raster(np.zeros((16, 16))))
        high = DepthMap(Raster(np.zeros((8, 8))))
        with pytest.raises(DimMismatch):
            guided_fuse(low, high)

    def test_values_anchored_to_low(self):
        # a step-edge low map with a detail-rich high map: fused output mean
        # stays near the upsampled low map, not the biased high map
        rng = np.random.default_rng(6)
        gt = np.where(rng.random((48, 48)) > 0.5, 2.0, 1.0)
        low = DepthMap(resize_bilinear(Raster(gt), 16, 16))
        high = DepthMap(Raster(gt + 5.0))
        fused = guided_fuse(low, high)
        low_up = resize_bilinear(low.raster, 48, 48)
        assert abs(fused.values.mean() - low_up.values.mean()) < 0.1
        assert abs(fused.values.mean() - high.values.mean()) > 4.0
