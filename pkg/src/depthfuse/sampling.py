"""Edge-guided point-pair sampling and ordinal classification.

For every edge pixel, four points are placed along the local gradient
direction at signed offsets delta_a < delta_b < 0 < delta_c < delta_d
(|delta| bounded), and the pairs (a,b), (b,c), (c,d) are emitted. The
ordinal indicator z marks pairs whose supervision values differ by more
than the ratio tolerance, i.e. pairs straddling a depth edge.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .gradops import EdgeMap, GradientField
from .raster import Raster

ZERO_MAGNITUDE = 1e-12

# values in the scaled [-1, 1] domain are shifted here before the ratio test
RATIO_SHIFT = 2.0


class PairSource(enum.Enum):
    FROM_GF = "gf"
    FROM_HIGH = "high"
    FROM_GT = "gt"


@dataclass(frozen=True)
class PointPair:
    i: tuple[int, int]  # (y, x)
    j: tuple[int, int]
    source: PairSource
    weight: float
    z: int


@dataclass(frozen=True)
class SampleConfig:
    alpha: float = 0.15
    beta: float = 60.0
    tau: float = 0.001
    sigma: float = 0.1
    weights: tuple[float, float] = (12.0, 8.0)  # (gf pairs, high pairs)
    rng_seed: int = 0
    max_pairs: int = 10000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.beta <= 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.tau <= 0.0:
            raise ValueError(f"tau must be > 0, got {self.tau}")

    def at_scale(self, divisor: int) -> "SampleConfig":
        """Config for a lower pyramid level (beta shrinks with resolution)."""
        return SampleConfig(self.alpha, self.beta / divisor, self.tau,
                            self.sigma, self.weights, self.rng_seed,
                            self.max_pairs)


def classify_pair(v_i: float, v_j: float, tau: float) -> int:
    """Ordinal indicator: 1 when the value ratio leaves [1/(1+tau), 1+tau].

    Near-zero operands make the ratio test degenerate: two near-zeros are
    treated as equal (z=0), a single near-zero as ordinally different (z=1).
    """
    zi = abs(v_i) < ZERO_MAGNITUDE
    zj = abs(v_j) < ZERO_MAGNITUDE
    if zi and zj:
        return 0
    if zi != zj:
        return 1
    ratio = v_i / v_j
    return 1 if (ratio >= 1.0 + tau or ratio <= 1.0 / (1.0 + tau)) else 0


def classify_pairs(v_i: np.ndarray, v_j: np.ndarray, tau: float) -> np.ndarray:
    """Vectorized classify_pair over equal-length value arrays."""
    zi = np.abs(v_i) < ZERO_MAGNITUDE
    zj = np.abs(v_j) < ZERO_MAGNITUDE
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = v_i / v_j
    z = ((ratio >= 1.0 + tau) | (ratio <= 1.0 / (1.0 + tau))).astype(np.int_)
    z[zi & zj] = 0
    z[zi != zj] = 1
    return z


def sample_edge_pairs(d: Raster, g: GradientField, e: EdgeMap,
                      cfg: SampleConfig, rng: np.random.Generator,
                      source: PairSource = PairSource.FROM_GF,
                      weight: float | None = None) -> list[PointPair]:
    """Sample ordered point quadruples along gradient directions at edges.

    ``d`` is the supervision raster used to classify each pair. Values that
    dip below zero (the scaled [-1, 1] domain) are shifted by +2 before the
    ratio test so all operands are positive.
    """
    if g.mag.shape != d.shape or e.mask.shape != d.shape:
        raise ValueError("raster, gradients and edge map must share dims")
    h, w = d.shape
    mag = g.mag.values
    ys, xs = np.nonzero(e.mask & (mag > 0.0))
    if ys.size == 0:
        return []

    beta = cfg.beta
    # ordered offsets: delta_a < delta_b < 0 < delta_c < delta_d, |delta| <= beta
    n = ys.size
    db = rng.uniform(-beta, 0.0, size=n)
    da = rng.uniform(-beta, db)
    dc = rng.uniform(0.0, beta, size=n)
    dd = rng.uniform(dc, beta)

    gmag = mag[ys, xs]
    ux = g.gx.values[ys, xs] / gmag
    uy = g.gy.values[ys, xs] / gmag

    vals = d.values
    shift = RATIO_SHIFT if vals.min() < 0.0 else 0.0
    if weight is None:
        weight = cfg.weights[0] if source is PairSource.FROM_GF else (
            cfg.weights[1] if source is PairSource.FROM_HIGH else 1.0)

    pts = []
    for delta in (da, db, dc, dd):
        px = np.clip(np.rint(xs + delta * ux), 0, w - 1).astype(np.intp)
        py = np.clip(np.rint(ys + delta * uy), 0, h - 1).astype(np.intp)
        pts.append((py, px))

    pairs: list[PointPair] = []
    for (ay, ax), (by, bx) in ((pts[0], pts[1]), (pts[1], pts[2]),
                               (pts[2], pts[3])):
        zs = classify_pairs(vals[ay, ax] + shift, vals[by, bx] + shift, cfg.tau)
        for k in range(n):
            pi = (int(ay[k]), int(ax[k]))
            pj = (int(by[k]), int(bx[k]))
            if pi == pj:
                continue
            pairs.append(PointPair(pi, pj, source, weight, int(zs[k])))

    if len(pairs) > cfg.max_pairs:
        keep = rng.choice(len(pairs), size=cfg.max_pairs, replace=False)
        keep.sort()
        pairs = [pairs[k] for k in keep]
    return pairs


def pair_arrays(pairs: list[PointPair]):
    """Column arrays (iy, ix, jy, jx, weight, z) for vectorized evaluation."""
    n = len(pairs)
    iy = np.empty(n, np.intp)
    ix = np.empty(n, np.intp)
    jy = np.empty(n, np.intp)
    jx = np.empty(n, np.intp)
    w = np.empty(n)
    z = np.empty(n, np.int_)
    for k, p in enumerate(pairs):
        iy[k], ix[k] = p.i
        jy[k], jx[k] = p.j
        w[k] = p.weight
        z[k] = p.z
    return iy, ix, jy, jx, w, z


def merge_pair_sets(gf_pairs: list[PointPair], high_pairs: list[PointPair],
                    weights: tuple[float, float] = (12.0, 8.0)) -> list[PointPair]:
    """Union of the two pair sets with per-source weights attached."""
    w_gf, w_high = weights
    if w_gf <= 0.0 or w_high <= 0.0:
        raise ValueError("pair weights must be positive")
    merged = [PointPair(p.i, p.j, PairSource.FROM_GF, w_gf, p.z)
              for p in gf_pairs]
    merged += [PointPair(p.i, p.j, PairSource.FROM_HIGH, w_high, p.z)
               for p in high_pairs]
    return merged
