"""Brute-force binary visibility by dense ray marching (testing only)."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .geometry import DepthMap
from .shadow import LightDirection, ShadowMask, _box

# the bundled TBB is too old for numba; prefer the other threading layers
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

START_OFFSET = 1e-4
SKIP_BLOCK = 8


@dataclass(frozen=True, eq=False)
class BinaryVisibility:
    lit: np.ndarray      # True where the light is visible (and on invalid pixels)
    t_hit: np.ndarray    # ray parameter of the first hit, NaN when lit
    valid: np.ndarray


@numba.njit(cache=True)
def _surface(height, valid, row, col, r0, r1, c0, c1):
    """Bilinear height at fractional (row, col); NaN outside the valid surface."""
    if row < r0 or row > r1 or col < c0 or col > c1:
        return np.nan
    i0 = min(max(int(np.floor(row)), r0), max(r0, r1 - 1))
    j0 = min(max(int(np.floor(col)), c0), max(c0, c1 - 1))
    i1 = min(i0 + 1, r1)
    j1 = min(j0 + 1, c1)
    if not (valid[i0, j0] and valid[i0, j1] and valid[i1, j0] and valid[i1, j1]):
        return np.nan
    fi = row - i0
    fj = col - j0
    return ((1.0 - fi) * ((1.0 - fj) * height[i0, j0] + fj * height[i0, j1])
            + fi * ((1.0 - fj) * height[i1, j0] + fj * height[i1, j1]))


def _block_max(height: np.ndarray, valid: np.ndarray, b: int) -> np.ndarray:
    """Max height reachable by bilinear lookups inside each b x b block of cells;
    +inf for blocks touching an invalid pixel, so they are never skipped."""
    h, w = height.shape
    nb_r, nb_c = -(-(h - 1) // b), -(-(w - 1) // b)
    out = np.full((max(nb_r, 1), max(nb_c, 1)), np.inf)
    for r in range(nb_r):
        for c in range(nb_c):
            sl = np.s_[r * b:min(r * b + b + 1, h), c * b:min(c * b + b + 1, w)]
            if valid[sl].all():
                out[r, c] = height[sl].max()
    return out


@numba.njit(parallel=True, cache=True)
def _march(height, valid, s, w, steps, offset, box, zmax, bmax, b, lit, t_hit):
    h, wd = height.shape
    r0, r1, c0, c1 = box
    xlo, xhi = c0 * s, c1 * s
    ylo, yhi = (h - 1 - r1) * s, (h - 1 - r0) * s
    for p in numba.prange(h * wd):
        i = p // wd
        j = p % wd
        if not valid[i, j]:
            continue
        x = j * s + offset * w[0]
        y = (h - 1 - i) * s + offset * w[1]
        z = height[i, j] + offset * w[2]
        # leave the volume through the bounding box sides or above the top
        t_max = (zmax - z) / w[2]
        if w[0] > 0:
            t_max = min(t_max, (xhi - x) / w[0])
        elif w[0] < 0:
            t_max = min(t_max, (xlo - x) / w[0])
        if w[1] > 0:
            t_max = min(t_max, (yhi - y) / w[1])
        elif w[1] < 0:
            t_max = min(t_max, (ylo - y) / w[1])
        if t_max <= 0.0:
            continue
        dt = t_max / steps
        k = 0
        while k <= steps:
            t = k * dt
            px = x + t * w[0]
            py = y + t * w[1]
            pz = z + t * w[2]
            row = (h - 1) - py / s
            col = px / s
            # the ray only rises, so above a block's maximum it stays clear
            # until it leaves the block: jump to the first step outside
            if row >= 0.0 and col >= 0.0:
                br = min(int(row) // b, bmax.shape[0] - 1)
                bc = min(int(col) // b, bmax.shape[1] - 1)
                if pz > bmax[br, bc]:
                    t_out = np.inf
                    if w[0] > 0:
                        t_out = min(t_out, ((bc + 1) * b * s - x) / w[0])
                    elif w[0] < 0:
                        t_out = min(t_out, (bc * b * s - x) / w[0])
                    if w[1] > 0:
                        t_out = min(t_out, ((h - 1 - br * b) * s - y) / w[1])
                    elif w[1] < 0:
                        t_out = min(t_out, ((h - 1 - (br + 1) * b) * s - y) / w[1])
                    nk = int(np.floor(t_out / dt)) + 1 if t_out < np.inf else steps + 1
                    k = max(k + 1, nk)
                    continue
            surf = _surface(height, valid, row, col, r0, r1, c0, c1)
            if surf != surf:
                break
            if pz < surf:
                lit[i, j] = False
                t_hit[i, j] = offset + t
                break
            k += 1


def trace_exact(d: DepthMap, omega: LightDirection, steps: int = 10000) -> BinaryVisibility:
    """March each shadow ray in ``steps`` equal increments until it leaves the
    volume; a ray found below the surface at any step is occluded."""
    if steps < 1000:
        raise ValueError(f"steps must be >= 1000, got {steps}")
    omega.require_front()
    height = np.ascontiguousarray(-d.values)
    height = np.where(d.valid, height, 0.0)
    lit = np.ones(d.shape, dtype=bool)
    t_hit = np.full(d.shape, np.nan)
    zmax = float(height[d.valid].max())
    bmax = _block_max(height, d.valid, SKIP_BLOCK)
    _march(height, np.ascontiguousarray(d.valid), d.pixel_spacing,
           np.ascontiguousarray(omega.vec), int(steps), START_OFFSET,
           np.array(_box(d.valid), dtype=np.int64), zmax, bmax, SKIP_BLOCK, lit, t_hit)
    return BinaryVisibility(lit, t_hit, d.valid)


def boundary_band(vis: BinaryVisibility, band: int) -> np.ndarray:
    """Pixels within ``band`` pixels (Chebyshev) of a lit/shadowed transition."""
    lit = vis.lit
    edge = np.zeros_like(lit)
    for axis in (0, 1):
        diff = np.diff(lit, axis=axis)
        both = vis.valid & np.roll(vis.valid, -1, axis=axis)
        both = both.take(range(lit.shape[axis] - 1), axis=axis)
        diff &= both
        if axis == 0:
            edge[:-1] |= diff
            edge[1:] |= diff
        else:
            edge[:, :-1] |= diff
            edge[:, 1:] |= diff
    if band <= 0:
        return edge
    return ndimage.binary_dilation(edge, structure=np.ones((2 * band + 1, 2 * band + 1), dtype=bool))


def compare_mask(mask: ShadowMask, vis: BinaryVisibility, threshold: float = 0.5,
                 boundary_band_px: int = 2) -> float:
    """Fraction of valid pixels outside the boundary band where the thresholded
    mask agrees with the oracle."""
    if mask.values.shape != vis.lit.shape:
        raise ValueError(f"mask {mask.values.shape} and oracle {vis.lit.shape} dimensions differ")
    keep = vis.valid & ~boundary_band(vis, boundary_band_px)
    if not keep.any():
        return 1.0
    agree = (mask.values < threshold) == ~vis.lit
    return float(agree[keep].mean())
