"""Self-supervised loss suite: multi-resolution ILNR on the value domain
against the low-resolution map, and the edge-pair ranking loss on the
gradient domain against the guided-filter fusion.

These are the plain numpy evaluators. The training graph versions live in
fusenet and must agree with these to 1e-10.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, ScaleCountMismatch
from .raster import DepthMap, Raster, resize_bilinear
from .sampling import PointPair

TRIM_FRACTION = 0.10
SIGMA_FLOOR = 1e-6
TANH_SCALE = 100.0


@dataclass(frozen=True)
class LossBreakdown:
    milnr: float
    rank: float
    per_scale_milnr: tuple[float, ...]

    @property
    def total(self) -> float:
        return self.milnr + self.rank


def trimmed_stats(values: np.ndarray) -> tuple[float, float]:
    """Mean/std after dropping the lowest and highest 10% of values.

    The std is population-style and floored at 1e-6.
    """
    flat = np.sort(values.ravel())
    k = int(TRIM_FRACTION * flat.size)
    kept = flat[k:flat.size - k] if k > 0 else flat
    mu = float(kept.mean())
    sd = float(kept.std())
    return mu, max(sd, SIGMA_FLOOR)


def _normalize(values: np.ndarray) -> np.ndarray:
    mu, sd = trimmed_stats(values)
    return (values - mu) / sd


def ilnr(pred: Raster, target: Raster) -> float:
    """Image-level normalized regression: L1 plus a tanh-compressed term on
    trim-normalized images. Invariant to positive affine transforms."""
    if pred.shape != target.shape:
        raise DimMismatch(f"pred {pred.shape} vs target {target.shape}")
    p = _normalize(pred.values)
    t = _normalize(target.values)
    return float(np.mean(np.abs(p - t)
                         + np.abs(np.tanh(p / TANH_SCALE)
                                  - np.tanh(t / TANH_SCALE))))


def milnr(preds: list[Raster], d_low: DepthMap) -> float:
    """Sum of ILNR over the prediction pyramid, each level against the
    low-resolution map resized to that level."""
    if len(preds) == 0:
        raise ScaleCountMismatch("need at least one prediction scale")
    total = 0.0
    for p in preds:
        target = resize_bilinear(d_low.raster, p.width, p.height)
        total += ilnr(p, target)
    return total


def rank_pair_term(pf_i: float, pf_j: float, pgf_i: float, pgf_j: float,
                   z: int, sigma: float) -> float:
    """Single-pair ranking energy.

    Same-side pairs (z=0) pay the squared prediction difference; straddling
    pairs (z=1) pay log(1 + exp(-1/|mismatch + sigma|)), bounded by log 2,
    with the singular point at zero argument defined by its limit, 0.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if z == 0:
        diff = pf_i - pf_j
        return diff * diff
    arg = (pf_i - pf_j) - (pgf_i - pgf_j) + sigma
    if arg == 0.0:
        return 0.0
    return math.log1p(math.exp(-1.0 / abs(arg)))


def ranking_loss(f: Raster, d_gf: Raster, pairs: list[PointPair],
                 sigma: float = 0.1) -> float:
    """Weighted mean of pair energies over the sampled pair set."""
    if f.shape != d_gf.shape:
        raise DimMismatch(f"f {f.shape} vs d_gf {d_gf.shape}")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not pairs:
        warnings.warn("ranking_loss over an empty pair set is 0", stacklevel=2)
        return 0.0
    from .sampling import pair_arrays

    iy, ix, jy, jx, w, z = pair_arrays(pairs)
    fv, gv = f.values, d_gf.values
    fd = fv[iy, ix] - fv[jy, jx]
    terms = fd * fd
    straddle = z == 1
    a = fd[straddle] - (gv[iy, ix] - gv[jy, jx])[straddle] + sigma
    with np.errstate(divide="ignore"):
        edge_terms = np.log1p(np.exp(-1.0 / np.abs(a)))
    edge_terms[a == 0.0] = 0.0
    terms[straddle] = edge_terms
    return float((w * terms).sum() / w.sum())


def fusion_loss(preds: list[Raster], d_low: DepthMap, d_gf: DepthMap,
                pairs, sigma: float = 0.1) -> LossBreakdown:
    """Total self-supervised objective: milnr + ranking.

    ``pairs`` is either one pair list (ranking at full scale only) or one
    list per prediction scale, where each lower scale ranks against the
    correspondingly resized guided fusion.
    """
    per_scale = []
    for p in preds:
        target = resize_bilinear(d_low.raster, p.width, p.height)
        per_scale.append(ilnr(p, target))
    milnr_total = float(sum(per_scale))

    if pairs and isinstance(pairs[0], PointPair):
        pairs = [pairs] + [[] for _ in preds[1:]]
    if len(pairs) != len(preds):
        raise ScaleCountMismatch(
            f"{len(pairs)} pair sets for {len(preds)} prediction scales")
    rank_total = 0.0
    for p, scale_pairs in zip(preds, pairs):
        if not scale_pairs:
            continue
        gf_r = resize_bilinear(d_gf.raster, p.width, p.height)
        rank_total += ranking_loss(p, gf_r, scale_pairs, sigma)
    return LossBreakdown(milnr_total, rank_total, tuple(per_scale))


# ---------------------------------------------------------------------------
# Ablation alternatives (not part of the default pipeline)

def gradient_loss(pred: Raster, target: Raster) -> float:
    """L1 gradient-matching loss (forward differences), ablation variant."""
    if pred.shape != target.shape:
        raise DimMismatch(f"pred {pred.shape} vs target {target.shape}")
    p, t = pred.values, target.values
    gx = np.abs((p[:, 1:] - p[:, :-1]) - (t[:, 1:] - t[:, :-1]))
    gy = np.abs((p[1:, :] - p[:-1, :]) - (t[1:, :] - t[:-1, :]))
    return float(gx.mean() + gy.mean())


def sgr_ranking_loss(f: Raster, d_gf: Raster, pairs: list[PointPair]) -> float:
    """Order-only ranking loss, ablation variant: straddling pairs pay a
    logistic penalty on the misordered prediction difference."""
    if not pairs:
        return 0.0
    fv, gv = f.values, d_gf.values
    num = 0.0
    den = 0.0
    for p in pairs:
        diff = fv[p.i] - fv[p.j]
        if p.z == 0:
            term = diff * diff
        else:
            direction = 1.0 if gv[p.i] >= gv[p.j] else -1.0
            term = math.log1p(math.exp(-direction * diff))
        num += p.weight * term
        den += p.weight
    return num / den
