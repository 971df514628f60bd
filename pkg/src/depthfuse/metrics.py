"""Scale/shift alignment and the monocular-depth evaluation metric suite:
AbsRel, SqRel, rms, log10, delta thresholds, plus the ordinal disagreement
rates over edge-sampled (d3r) and uniform (ord_metric) pixel pairs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    EmptyPairSet,
    EmptyValidSet,
    NonPositiveForLog,
)
from .gradops import edge_map, sobel
from .raster import DepthMap, DepthSemantics, Raster, from_inverse_depth
from .sampling import PairSource, SampleConfig, classify_pair, sample_edge_pairs

LOG_CLAMP = 1e-6
ORD_PAIRS_DEFAULT = 50000


@dataclass(frozen=True)
class MetricsReport:
    absrel: float
    sqrel: float
    rms: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int
    alignment: tuple[float, float]  # (s, t); (1, 0) when align=False
    clamped: int = 0                # pixels clamped for log10/delta
    d3r: float | None = None
    ord: float | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("absrel", "sqrel", "rms", "log10", "delta1", "delta2", "delta3",
              "n_valid", "clamped", "d3r", "ord")}
        d["scale"], d["shift"] = self.alignment
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _as_depth(d: DepthMap) -> DepthMap:
    if d.semantics is DepthSemantics.INVERSE_DEPTH:
        return from_inverse_depth(d)
    return d


def _valid_intersection(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    if pred.raster.shape != gt.raster.shape:
        raise DimMismatch(
            f"pred {pred.raster.shape} vs gt {gt.raster.shape}")
    valid = pred.valid_mask() & gt.valid_mask()
    if not valid.any():
        raise EmptyValidSet("no pixel is valid in both maps")
    return valid


def align_scale_shift(pred: DepthMap, gt: DepthMap):
    """Least-squares fit of s*pred + t to gt over the valid intersection.

    Returns (s, t, aligned DepthMap). A constant prediction makes the normal
    equations singular; that degenerates to s=0, t=mean(gt) with a warning.
    """
    pred = _as_depth(pred)
    gt = _as_depth(gt)
    valid = _valid_intersection(pred, gt)
    d = pred.values[valid]
    g = gt.values[valid]
    if d.size < 2:
        raise EmptyValidSet("alignment needs at least 2 valid pixels")

    n = float(d.size)
    sd, sg = float(d.sum()), float(g.sum())
    sdd, sdg = float(d @ d), float(d @ g)
    det = sdd * n - sd * sd
    if det <= 0.0 or np.ptp(d) == 0.0:
        warnings.warn("constant prediction: falling back to s=0, t=mean(gt)",
                      stacklevel=2)
        s, t = 0.0, sg / n
    else:
        s = (sdg * n - sd * sg) / det
        t = (sdd * sg - sd * sdg) / det
    aligned = DepthMap(Raster(s * pred.values + t), DepthSemantics.DEPTH,
                       pred.valid)
    return s, t, aligned


def compute_metrics(pred: DepthMap, gt: DepthMap, align: bool = True) -> MetricsReport:
    """Error metrics over the valid intersection.

    absrel = mean |g - d| / g, sqrel = mean ((g - d) / g)^2,
    rms = sqrt(mean (g - d)^2), log10 = mean |log10(g) - log10(d)|,
    delta_k = fraction with max(g/d, d/g) < 1.25^k. For log10 and the delta
    thresholds, non-positive operands are clamped to 1e-6 and counted.
    """
    pred = _as_depth(pred)
    gt = _as_depth(gt)
    valid = _valid_intersection(pred, gt)

    if align:
        s, t, aligned = align_scale_shift(pred, gt)
    else:
        s, t, aligned = 1.0, 0.0, pred
    d = aligned.values[valid]
    g = gt.values[valid]
    if np.all(g <= 0.0):
        raise NonPositiveForLog("ground truth has no positive values")

    err = g - d
    absrel = float(np.mean(np.abs(err) / g))
    sqrel = float(np.mean((err / g) ** 2))
    rms = float(np.sqrt(np.mean(err ** 2)))

    clamped = int(np.count_nonzero(d <= 0.0) + np.count_nonzero(g <= 0.0))
    dc = np.maximum(d, LOG_CLAMP)
    gc = np.maximum(g, LOG_CLAMP)
    log10 = float(np.mean(np.abs(np.log10(gc) - np.log10(dc))))
    ratio = np.maximum(gc / dc, dc / gc)
    deltas = [float(np.mean(ratio < 1.25 ** k)) for k in (1, 2, 3)]

    return MetricsReport(absrel, sqrel, rms, log10, *deltas,
                         n_valid=int(d.size), alignment=(s, t),
                         clamped=clamped)


# ---------------------------------------------------------------------------
# Ordinal disagreement metrics

def _ordinal_ready(values: np.ndarray) -> np.ndarray:
    """Shift values to a positive range so the ratio-based ordinal test is
    meaningful (the test is invariant to positive scaling, not to shifts of
    already-positive data, so the shift is only applied when needed)."""
    lo = values.min()
    if lo <= 0.0:
        return values - lo + 1.0
    return values


def _disagreement(pairs, pred_vals: np.ndarray, tau: float) -> float:
    num = 0.0
    den = 0.0
    for p in pairs:
        z_pred = classify_pair(pred_vals[p.i], pred_vals[p.j], tau)
        num += p.weight * (1.0 if z_pred != p.z else 0.0)
        den += p.weight
    return num / den


def d3r(pred: DepthMap, gt: DepthMap, cfg: SampleConfig | None = None,
        rng: np.random.Generator | None = None) -> float:
    """Ordinal disagreement over pairs sampled at ground-truth depth edges.

    Reference ordinals come from the ground truth; the prediction is
    scale/shift aligned before classification. All pairs weigh 1.
    """
    pred = _as_depth(pred)
    gt = _as_depth(gt)
    if cfg is None:
        cfg = SampleConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    _, _, aligned = align_scale_shift(pred, gt)

    g = sobel(gt.raster)
    e = edge_map(g, cfg.alpha)
    pairs = sample_edge_pairs(gt.raster, g, e, cfg, rng,
                              source=PairSource.FROM_GT, weight=1.0)
    if not pairs:
        raise EmptyPairSet("no edge pairs sampled from the ground truth")
    return _disagreement(pairs, _ordinal_ready(aligned.values), cfg.tau)


def ord_metric(pred: DepthMap, gt: DepthMap, n_pairs: int = ORD_PAIRS_DEFAULT,
               rng: np.random.Generator | None = None,
               tau: float = 0.001) -> float:
    """Ordinal disagreement over uniformly random valid pixel pairs."""
    pred = _as_depth(pred)
    gt = _as_depth(gt)
    if n_pairs < 1:
        raise EmptyPairSet(f"n_pairs must be >= 1, got {n_pairs}")
    if rng is None:
        rng = np.random.default_rng(0)
    valid = _valid_intersection(pred, gt)
    ys, xs = np.nonzero(valid)
    if ys.size < 2:
        raise EmptyPairSet("need at least 2 valid pixels")
    _, _, aligned = align_scale_shift(pred, gt)

    ii = rng.integers(0, ys.size, size=n_pairs)
    jj = rng.integers(0, ys.size, size=n_pairs)
    keep = ii != jj
    if not keep.any():
        raise EmptyPairSet("all sampled pairs were degenerate")
    gv = _ordinal_ready(gt.values)
    pv = _ordinal_ready(aligned.values)
    num = 0
    den = 0
    for a, b in zip(ii[keep], jj[keep]):
        pi = (int(ys[a]), int(xs[a]))
        pj = (int(ys[b]), int(xs[b]))
        z_gt = classify_pair(gv[pi], gv[pj], tau)
        z_pred = classify_pair(pv[pi], pv[pj], tau)
        num += int(z_pred != z_gt)
        den += 1
    return num / den


def full_report(pred: DepthMap, gt: DepthMap, align: bool = True,
                cfg: SampleConfig | None = None,
                rng: np.random.Generator | None = None,
                n_ord_pairs: int = ORD_PAIRS_DEFAULT) -> MetricsReport:
    """compute_metrics plus the ordinal metrics in one report."""
    base = compute_metrics(pred, gt, align=align)
    if cfg is None:
        cfg = SampleConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    try:
        d3r_val = d3r(pred, gt, cfg, rng)
    except EmptyPairSet:
        d3r_val = None
    ord_val = ord_metric(pred, gt, n_ord_pairs, rng, cfg.tau)
    return MetricsReport(base.absrel, base.sqrel, base.rms, base.log10,
                         base.delta1, base.delta2, base.delta3, base.n_valid,
                         base.alignment, base.clamped, d3r_val, ord_val)
