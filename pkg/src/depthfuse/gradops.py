"""Gradient extraction, edge maps, box/guided filtering, and guided fusion.

The guided fusion of a value-accurate low-resolution depth map with a
detail-rich high-resolution one (guide = the high-resolution map) produces
the self-supervision target used in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimMismatch, TooSmall
from .raster import DepthMap, Raster, resize_bilinear

GUIDED_EPS_DEFAULT = 1e-12
GUIDED_RADIUS_DIVISOR = 12  # radius = floor(width / 12)
EDGE_ALPHA_DEFAULT = 0.15


@dataclass(frozen=True)
class GradientField:
    gx: Raster
    gy: Raster
    mag: Raster

    def __post_init__(self):
        if not (self.gx.shape == self.gy.shape == self.mag.shape):
            raise DimMismatch("gradient components must share dims")


@dataclass(frozen=True)
class EdgeMap:
    mask: np.ndarray  # boolean, same dims as the source gradient field
    alpha: float

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    def count(self):
        return int(self.mask.sum())


def sobel(r: Raster) -> GradientField:
    """3x3 Sobel gradients and magnitude, clamp-to-edge borders."""
    if r.height < 3 or r.width < 3:
        raise TooSmall(f"sobel needs at least 3x3, got {r.width}x{r.height}")
    gx, gy = kernels.sobel(r.values)
    mag = np.hypot(gx, gy)
    return GradientField(Raster(gx), Raster(gy), Raster(mag))


def edge_map(g: GradientField, alpha: float = EDGE_ALPHA_DEFAULT) -> EdgeMap:
    """Pixels whose gradient magnitude reaches (1 - alpha) * max magnitude.

    A featureless image (all-zero magnitude) yields an empty mask.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    mag = g.mag.values
    peak = mag.max()
    if peak == 0.0:
        return EdgeMap(np.zeros(mag.shape, dtype=bool), alpha)
    return EdgeMap(mag >= (1.0 - alpha) * peak, alpha)


def box_filter(r: Raster, radius: int) -> Raster:
    """Mean over the border-clipped (2r+1)^2 window (integral-image based)."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    return Raster(kernels.box_filter(r.values, radius))


def guided_filter(guide: Raster, input_: Raster, radius: int, eps: float) -> Raster:
    """Edge-preserving local linear filter of ``input_`` guided by ``guide``."""
    if guide.shape != input_.shape:
        raise DimMismatch(
            f"guide {guide.shape} and input {input_.shape} dims differ")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    if eps <= 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    guide_v, p = guide.values, input_.values
    mean_i = kernels.box_filter(guide_v, radius)
    mean_p = kernels.box_filter(p, radius)
    corr_ip = kernels.box_filter(guide_v * p, radius)
    corr_ii = kernels.box_filter(guide_v * guide_v, radius)
    var_i = corr_ii - mean_i * mean_i
    cov_ip = corr_ip - mean_i * mean_p
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    out = kernels.box_filter(a, radius) * guide_v + kernels.box_filter(b, radius)
    return Raster(out)


def default_guided_radius(width: int) -> int:
    return max(1, width // GUIDED_RADIUS_DIVISOR)


def guided_fuse(d_low: DepthMap, d_high: DepthMap, radius: int | None = None,
                eps: float = GUIDED_EPS_DEFAULT) -> DepthMap:
    """Fuse value-accurate d_low with detail-rich d_high via guided filtering.

    d_low is bilinearly upsampled to d_high's dims and filtered with
    guide = d_high, so the guide's gradient structure is transferred while
    the values stay anchored to d_low.
    """
    if d_high.raster.width < d_low.raster.width or \
            d_high.raster.height < d_low.raster.height:
        raise DimMismatch("d_high must be at least as large as d_low")
    if radius is None:
        radius = default_guided_radius(d_high.raster.width)
    low_up = resize_bilinear(d_low.raster, d_high.raster.width,
                             d_high.raster.height)
    fused = guided_filter(d_high.raster, low_up, radius, eps)
    return DepthMap(fused, d_low.semantics)
