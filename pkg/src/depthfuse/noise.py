"""Noise injection and the robustness sweep harness.

Noise is applied to the synthetic scene image the detail-rich depth map is
derived from (see synthetic module), mimicking camera noise corrupting the
high-resolution prediction while the value-accurate low-resolution map stays
clean.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRangeInput
from .gradops import edge_map, guided_fuse, sobel
from .poisson import mask_from_edges, poisson_fuse
from .raster import DepthMap, Raster, resize_bilinear

VARIANCE_GRID = tuple(round(0.001 * k, 3) for k in range(10))  # 0 .. 0.009
SNR_GRID = tuple(round(1.0 - 0.01 * k, 2) for k in range(6))   # 1.00 .. 0.95


class NoiseKind(enum.Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    PEPPER = "pepper"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    param: float = 0.0   # variance for gaussian, snr for pepper
    seed: int = 0

    def __post_init__(self):
        if self.kind is NoiseKind.GAUSSIAN and not 0.0 <= self.param <= 0.01:
            raise OutOfRangeInput(
                f"gaussian variance {self.param} outside [0, 0.01]")
        if self.kind is NoiseKind.PEPPER and not 0.9 <= self.param <= 1.0:
            raise OutOfRangeInput(f"pepper snr {self.param} outside [0.9, 1.0]")

    def apply(self, img: Raster, rng: np.random.Generator | None = None) -> Raster:
        if rng is None:
            rng = np.random.default_rng(self.seed)
        if self.kind is NoiseKind.GAUSSIAN:
            return add_gaussian(img, self.param, rng)
        if self.kind is NoiseKind.PEPPER:
            return add_pepper(img, self.param, rng)
        return Raster(img.values)


def add_gaussian(img: Raster, variance: float, rng: np.random.Generator) -> Raster:
    """Add zero-mean Gaussian noise of the given variance, clamped to [0, 1]."""
    v = img.values
    if v.min() < 0.0 or v.max() > 1.0:
        raise OutOfRangeInput("add_gaussian expects values in [0, 1]")
    if variance < 0.0:
        raise OutOfRangeInput(f"variance must be >= 0, got {variance}")
    if variance == 0.0:
        return Raster(v)
    noisy = v + rng.normal(0.0, np.sqrt(variance), size=v.shape)
    return Raster(np.clip(noisy, 0.0, 1.0))


def clamp_fraction(img: Raster, variance: float, rng: np.random.Generator) -> float:
    """Fraction of pixels the [0, 1] clamp in add_gaussian would touch."""
    v = img.values
    noisy = v + rng.normal(0.0, np.sqrt(variance), size=v.shape)
    return float(np.mean((noisy < 0.0) | (noisy > 1.0)))


def add_pepper(img: Raster, snr: float, rng: np.random.Generator) -> Raster:
    """Corrupt each pixel with probability (1 - snr) to 0 or 1, equally."""
    if not 0.0 < snr <= 1.0:
        raise OutOfRangeInput(f"snr must be in (0, 1], got {snr}")
    v = img.values.copy()
    if snr == 1.0:
        return Raster(v)
    hit = rng.random(v.shape) < (1.0 - snr)
    salt = rng.random(v.shape) < 0.5
    v[hit] = np.where(salt[hit], 1.0, 0.0)
    return Raster(v)


# ---------------------------------------------------------------------------
# Reference pipelines for the sweep

def guided_pipeline(d_low: DepthMap, d_high: DepthMap) -> DepthMap:
    """The gradient-based fusion under test (guided filtering)."""
    return guided_fuse(d_low, d_high)


def naive_poisson_pipeline(d_low: DepthMap, d_high: DepthMap,
                           alpha: float = 0.15,
                           dilate: int | None = None) -> DepthMap:
    """Baseline: hard edge mask from the high-res map, Poisson composite.

    ``dilate`` defaults to W/12 so the baseline trusts the high-resolution
    gradients over the same neighbourhood the guided filter uses as its
    window radius, making the two pipelines spatially comparable.
    """
    low_up = resize_bilinear(d_low.raster, d_high.raster.width,
                             d_high.raster.height)
    if dilate is None:
        dilate = max(1, d_high.raster.width // 12)
    g = sobel(d_high.raster)
    omega = mask_from_edges(edge_map(g, alpha), dilate)
    fused = poisson_fuse(low_up, d_high.raster, omega)
    return DepthMap(fused, d_low.semantics)


def noise_sweep(pipeline, fixtures, specs: list[NoiseSpec]) -> list[dict]:
    """Run ``pipeline(d_low, d_high)`` on every (fixture, spec) combination.

    ``fixtures`` are synthetic.Fixture objects; the spec's noise corrupts the
    scene image before the high-resolution map is re-derived. Returns one row
    dict per combination: kind, param, seed, fixture, delta1, absrel.
    """
    from .metrics import compute_metrics
    from .synthetic import derive_high

    rows = []
    for fx in fixtures:
        for spec in specs:
            noisy_img = spec.apply(fx.image)
            d_high = derive_high(noisy_img, fx.bias)
            fused = pipeline(fx.d_low, d_high)
            report = compute_metrics(fused, fx.gt, align=True)
            rows.append({
                "kind": spec.kind.value,
                "param": spec.param,
                "seed": spec.seed,
                "fixture": fx.name,
                "delta1": report.delta1,
                "absrel": report.absrel,
            })
    return rows


def write_sweep_csv(rows: list[dict], path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["kind", "param", "seed", "fixture", "delta1", "absrel"])
        writer.writeheader()
        writer.writerows(rows)
