"""Explicit-mask gradient-domain fusion: the non-learned reference solver.

Solves the L2 relaxation of the fusion objective: inside the mask the
Laplacian of the output matches the high-resolution source, outside it the
output equals the upsampled low-resolution map exactly (Dirichlet values).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NoConvergence, TooSmall
from .gradops import EdgeMap
from .raster import Raster

CG_TOL_DEFAULT = 1e-10


@dataclass(frozen=True)
class FusionMask:
    """Boolean fusion region; the border ring is always Dirichlet (false)."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)  # owned copy
        if m.ndim != 2:
            raise DimMismatch("fusion mask must be 2-D")
        m[0, :] = m[-1, :] = False
        m[:, 0] = m[:, -1] = False
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    def count(self):
        return int(self.mask.sum())


def laplacian(r: Raster) -> Raster:
    """5-point stencil 4c - N - S - E - W with clamp-to-edge borders."""
    if r.height < 3 or r.width < 3:
        raise TooSmall(f"laplacian needs at least 3x3, got {r.width}x{r.height}")
    p = np.pad(r.values, 1, mode="edge")
    out = (4.0 * p[1:-1, 1:-1] - p[:-2, 1:-1] - p[2:, 1:-1]
           - p[1:-1, :-2] - p[1:-1, 2:])
    return Raster(out)


def mask_from_edges(e: EdgeMap, dilate_radius: int) -> FusionMask:
    """Chebyshev dilation of an edge mask; border ring cleared."""
    if dilate_radius < 0:
        raise ValueError(f"dilate_radius must be >= 0, got {dilate_radius}")
    m = e.mask
    if dilate_radius > 0:
        p = np.pad(m, dilate_radius, mode="constant", constant_values=False)
        out = np.zeros_like(m)
        h, w = m.shape
        for dy in range(2 * dilate_radius + 1):
            for dx in range(2 * dilate_radius + 1):
                out |= p[dy:dy + h, dx:dx + w]
        m = out
    return FusionMask(m)


def _interior_system(omega: np.ndarray):
    """Index bookkeeping for the masked 5-point Laplacian.

    Returns (pixel indices of the unknowns, neighbor table with -1 for
    neighbors outside the mask, flat indices of those outside neighbors).
    """
    h, w = omega.shape
    flat = omega.ravel()
    idx = np.flatnonzero(flat)
    local = np.full(h * w, -1, dtype=np.intp)
    local[idx] = np.arange(idx.size)
    ys, xs = np.unravel_index(idx, (h, w))
    nb_local = np.empty((idx.size, 4), dtype=np.intp)
    nb_flat = np.empty((idx.size, 4), dtype=np.intp)
    for k, (dy, dx) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        nf = (ys + dy) * w + (xs + dx)  # border excluded => always in bounds
        nb_flat[:, k] = nf
        nb_local[:, k] = local[nf]
    return idx, nb_local, nb_flat


def poisson_fuse(d_low_up: Raster, d_high: Raster, omega: FusionMask,
                 tol: float = CG_TOL_DEFAULT, max_iter: int | None = None) -> Raster:
    """Gradient-domain composite of d_high into d_low_up over the mask.

    Conjugate gradient (Jacobi preconditioned) on the SPD interior system;
    deterministic, single-threaded.
    """
    if d_low_up.shape != d_high.shape or d_low_up.shape != omega.mask.shape:
        raise DimMismatch("poisson_fuse inputs must share dims")
    if omega.count() == 0:
        return Raster(d_low_up.values)

    idx, nb_local, nb_flat = _interior_system(omega.mask)
    n = idx.size
    if max_iter is None:
        max_iter = max(1, math.ceil(10.0 * math.sqrt(n)))

    lap_high = laplacian(d_high).values.ravel()
    low_flat = d_low_up.values.ravel()

    b = lap_high[idx].copy()
    outside = nb_local < 0
    for k in range(4):
        mask_k = outside[:, k]
        b[mask_k] += low_flat[nb_flat[mask_k, k]]

    inside = ~outside
    nb_safe = np.where(inside, nb_local, 0)

    def apply_a(u):
        gathered = u[nb_safe]
        gathered[outside] = 0.0
        return 4.0 * u - gathered.sum(axis=1)

    x = np.zeros(n)
    r = b.copy()
    z = r / 4.0  # Jacobi: diag(A) == 4
    p = z.copy()
    rz = float(r @ z)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        b_norm = 1.0
    converged = np.linalg.norm(r) <= tol * b_norm
    it = 0
    while not converged and it < max_iter:
        ap = apply_a(p)
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= tol * b_norm:
            converged = True
            break
        z = r / 4.0
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    if not converged:
        rel = float(np.linalg.norm(r)) / b_norm
        raise NoConvergence(
            f"CG residual {rel:.3e} > tol {tol:.3e} after {max_iter} iterations")

    out = d_low_up.values.copy()
    out.ravel()[idx] = x
    return Raster(out)
