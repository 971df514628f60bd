"""Synthetic piecewise-constant fixtures for tests and the noise harness.

Derivation, shared by the noise sweep:
  - a scene image in [0, 1] made of constant-intensity shapes (this is the
    raster that noise corrupts);
  - ground truth depth:  gt = 1 + 4 * image   (piecewise constant, in [1, 5]);
  - the value-accurate map: d_low = box-blurred, downsampled gt — correct
    values, soft edges;
  - the detail-rich map: d_high = (1 + 4 * image) + bias, where bias is a
    smooth plane — crisp edges, globally wrong values. Under noise the image
    is corrupted before this mapping, so only d_high degrades.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradops import box_filter
from .raster import DepthMap, Raster, resize_bilinear

DEPTH_BASE = 1.0
DEPTH_SPAN = 4.0
LOW_BLUR_RADIUS = 2

FIXTURE_NAMES = ("blocks", "disks", "stripes", "steps", "rings")


@dataclass(frozen=True)
class Fixture:
    name: str
    image: Raster       # scene image, [0, 1], high dims
    bias: Raster        # smooth plane added to d_high, high dims
    gt: DepthMap        # ground truth depth, high dims
    d_low: DepthMap     # blurred + downsampled gt, low dims
    d_high: DepthMap    # clean detail-rich map, high dims


def depth_from_image(img: Raster) -> Raster:
    return Raster(DEPTH_BASE + DEPTH_SPAN * img.values)


def derive_high(img: Raster, bias: Raster) -> DepthMap:
    return DepthMap(Raster(depth_from_image(img).values + bias.values))


def derive_low(gt: DepthMap, low_h: int, low_w: int) -> DepthMap:
    small = resize_bilinear(gt.raster, low_w, low_h)
    return DepthMap(box_filter(small, LOW_BLUR_RADIUS), gt.semantics)


def _bias_plane(h, w, rng) -> Raster:
    b0 = rng.uniform(-0.3, 0.3)
    bx = rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 0.8)
    by = rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 0.8)
    yy, xx = np.mgrid[0:h, 0:w]
    return Raster(b0 + bx * (xx / (w - 1) - 0.5) + by * (yy / (h - 1) - 0.5))


def _levels(rng, n):
    # distinct quantized intensities so regions stay piecewise constant
    return rng.choice(np.arange(1, 10) / 10.0, size=n, replace=False)


def _image_blocks(h, w, rng):
    img = np.full((h, w), 0.1)
    for level in _levels(rng, 5):
        bh = rng.integers(h // 6, h // 2)
        bw = rng.integers(w // 6, w // 2)
        y = rng.integers(0, h - bh)
        x = rng.integers(0, w - bw)
        img[y:y + bh, x:x + bw] = level
    return img


def _image_disks(h, w, rng):
    img = np.full((h, w), 0.2)
    yy, xx = np.mgrid[0:h, 0:w]
    for level in _levels(rng, 4):
        cy = rng.integers(h // 5, 4 * h // 5)
        cx = rng.integers(w // 5, 4 * w // 5)
        r = rng.integers(min(h, w) // 10, min(h, w) // 4)
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = level
    return img


def _image_stripes(h, w, rng):
    img = np.empty((h, w))
    edges = np.sort(rng.choice(np.arange(w // 8, w - w // 8), size=4,
                               replace=False))
    bounds = [0, *edges.tolist(), w]
    for (x0, x1), level in zip(zip(bounds[:-1], bounds[1:]), _levels(rng, 5)):
        img[:, x0:x1] = level
    return img


def _image_steps(h, w, rng):
    img = np.empty((h, w))
    levels = _levels(rng, 4)
    img[:h // 2, :w // 2] = levels[0]
    img[:h // 2, w // 2:] = levels[1]
    img[h // 2:, :w // 2] = levels[2]
    img[h // 2:, w // 2:] = levels[3]
    # one off-grid block so the layout is not symmetric
    img[h // 3:2 * h // 3, w // 3:2 * w // 3] = _levels(rng, 1)[0]
    return img


def _image_rings(h, w, rng):
    img = np.empty((h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    cheb = np.maximum(np.abs(yy - h // 2), np.abs(xx - w // 2))
    levels = _levels(rng, 5)
    step = max(h, w) // 2 // len(levels) + 1
    for k, level in enumerate(levels):
        img[(cheb >= k * step) & (cheb < (k + 1) * step)] = level
    img[cheb >= len(levels) * step] = levels[-1]
    return img


_BUILDERS = {
    "blocks": _image_blocks,
    "disks": _image_disks,
    "stripes": _image_stripes,
    "steps": _image_steps,
    "rings": _image_rings,
}


def make_fixture(name: str, size_low=(64, 64), size_high=(192, 192),
                 seed: int = 7) -> Fixture:
    if name not in _BUILDERS:
        raise KeyError(f"unknown fixture {name!r}, have {sorted(_BUILDERS)}")
    hh, hw = size_high
    lh, lw = size_low
    rng = np.random.default_rng((seed, FIXTURE_NAMES.index(name)))
    image = Raster(_BUILDERS[name](hh, hw, rng))
    bias = _bias_plane(hh, hw, rng)
    gt = DepthMap(depth_from_image(image))
    d_low = derive_low(gt, lh, lw)
    d_high = derive_high(image, bias)
    return Fixture(name, image, bias, gt, d_low, d_high)


def make_fixtures(size_low=(64, 64), size_high=(192, 192),
                  seed: int = 7) -> list[Fixture]:
    return [make_fixture(n, size_low, size_high, seed) for n in FIXTURE_NAMES]
