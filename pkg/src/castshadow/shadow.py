"""Soft cast-shadow masks from a height field by ray sampling.

For each surface point the shadow ray toward the light is projected onto the
image plane and ``m`` depth samples are taken at regular intervals along the
projection. The closest of the reconstructed surface points to the 3-D ray
decides visibility through a smooth, even function of that distance which is
0 at contact and tends to 1 far away.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tape as T
from .geometry import DepthMap, PointGrid

# d_min is measured in units of 1/DEFAULT_DISTANCE_SCALE_PX pixels unless a
# world-unit multiplier is given explicitly
DEFAULT_DISTANCE_SCALE_PX = 4.0
DEFAULT_START_OFFSET_PX = 2.0
DEGENERATE_XY = 1e-6
CHUNK_PIXELS = 1024
CROSSING_BISECTIONS = 24
SELF_CELL_PX = 1.0


@dataclass(frozen=True, eq=False)
class LightDirection:
    """Unit vector pointing from the surface toward the light."""
    vec: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.vec, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(v)):
            raise ValueError("light direction must be finite")
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError(f"light direction must be unit length, |w| = {np.linalg.norm(v)}")
        v.flags.writeable = False
        object.__setattr__(self, "vec", v)

    @classmethod
    def from_vector(cls, v) -> "LightDirection":
        v = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(v)
        if not n > 0:
            raise ValueError("light vector has zero length")
        return cls(v / n)

    @classmethod
    def from_angles(cls, azimuth_deg: float, elevation_deg: float) -> "LightDirection":
        """Azimuth from +x toward +y in the image plane, elevation above it."""
        az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
        if elevation_deg == 90.0:
            return cls(np.array([0.0, 0.0, 1.0]))
        return cls.from_vector([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])

    @property
    def azimuth_deg(self) -> float:
        return math.degrees(math.atan2(self.vec[1], self.vec[0]))

    @property
    def elevation_deg(self) -> float:
        return math.degrees(math.asin(max(-1.0, min(1.0, self.vec[2]))))

    def require_front(self) -> None:
        if not self.vec[2] > 0:
            raise ValueError(f"light must be in front of the surface (w_z > 0), got w_z = {self.vec[2]}")


@dataclass(frozen=True)
class ShadowConfig:
    """Sampling parameters.

    ``start_offset`` is a world-unit distance in the image plane skipped
    before the first sample; ``None`` means two pixels. ``distance_scale``
    multiplies d_min (world units) before the visibility function; ``None``
    means ``4 / pixel_spacing`` so the soft edge is about a pixel wide at any
    resolution. With ``refine_crossing`` a pixel whose samples show the ray
    passing below the surface also scores the interpolated crossing point
    between the bracketing samples, so thin walls between samples still
    occlude.
    """
    samples: int = 160
    start_offset: float | None = None
    distance_scale: float | None = None
    oob_policy: str = "terminate"
    refine_crossing: bool = True

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if self.start_offset is not None and not self.start_offset >= 0:
            raise ValueError(f"start_offset must be >= 0, got {self.start_offset}")
        if self.distance_scale is not None and not self.distance_scale > 0:
            raise ValueError(f"distance_scale must be > 0, got {self.distance_scale}")
        if self.oob_policy not in ("terminate", "skip"):
            raise ValueError(f"oob_policy must be 'terminate' or 'skip', got {self.oob_policy!r}")

    def resolved_start(self, spacing: float) -> float:
        return DEFAULT_START_OFFSET_PX * spacing if self.start_offset is None else self.start_offset

    def resolved_scale(self, spacing: float) -> float:
        return DEFAULT_DISTANCE_SCALE_PX / spacing if self.distance_scale is None else self.distance_scale


@dataclass(frozen=True, eq=False)
class ShadowMask:
    values: np.ndarray  # 1 = lit, 0 = shadowed; 1 on invalid pixels
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class RayLayout:
    """Sample placement for every valid pixel; constant w.r.t. gradients."""
    shape: tuple[int, int]
    spacing: float
    pixels: np.ndarray       # flat indices of valid pixels
    u_row: float
    u_col: float
    start_px: float
    step_px: np.ndarray      # per pixel
    count: np.ndarray        # 0 or m per pixel
    samples: int
    box: tuple[int, int, int, int]  # r0, r1, c0, c1 inclusive
    valid: np.ndarray
    check_stencil: bool
    terminate: bool
    refine: bool = True

    @property
    def degenerate(self) -> bool:
        return self.samples == 0 or not np.any(self.count)


def _box(valid: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.nonzero(valid.any(axis=1))[0]
    cols = np.nonzero(valid.any(axis=0))[0]
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def ray_layout(valid: np.ndarray, spacing: float, omega, cfg: ShadowConfig,
               pixels: np.ndarray | None = None) -> RayLayout:
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    if pixels is None:
        pixels = np.flatnonzero(valid)
    omega = np.asarray(omega, dtype=np.float64)
    r0, r1, c0, c1 = _box(valid)
    m = cfg.samples
    start_px = cfg.resolved_start(spacing) / spacing
    n2 = math.hypot(omega[0], omega[1])
    n = len(pixels)
    check = not valid[r0:r1 + 1, c0:c1 + 1].all()
    if n2 < DEGENERATE_XY:
        return RayLayout((h, w), spacing, pixels, 0.0, 0.0, start_px, np.zeros(n),
                         np.zeros(n, dtype=np.int64), m, (r0, r1, c0, c1), valid, check,
                         cfg.oob_policy == "terminate", cfg.refine_crossing)
    u_col = omega[0] / n2
    u_row = -omega[1] / n2
    ii, jj = np.divmod(pixels, w)
    t_exit = np.full(n, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        if u_col > 0:
            t_exit = np.minimum(t_exit, (c1 - jj) / u_col)
        elif u_col < 0:
            t_exit = np.minimum(t_exit, (c0 - jj) / u_col)
        if u_row > 0:
            t_exit = np.minimum(t_exit, (r1 - ii) / u_row)
        elif u_row < 0:
            t_exit = np.minimum(t_exit, (r0 - ii) / u_row)
    count = np.where(t_exit > start_px, m, 0).astype(np.int64)
    step = (t_exit - start_px) / (m - 1) if m > 1 else np.zeros(n)
    step = np.where(count > 0, step, 0.0)
    return RayLayout((h, w), spacing, pixels, float(u_row), float(u_col), start_px, step,
                     count, m, (r0, r1, c0, c1), valid, check, cfg.oob_policy == "terminate",
                     cfg.refine_crossing)


def _positions(layout: RayLayout, sl: slice):
    pix = layout.pixels[sl]
    ii, jj = np.divmod(pix, layout.shape[1])
    k = np.arange(layout.samples, dtype=np.float64)
    t = layout.start_px + layout.step_px[sl][:, None] * k
    pi = ii[:, None] + t * layout.u_row
    pj = jj[:, None] + t * layout.u_col
    return ii, jj, pi, pj, t


def _stencil(layout: RayLayout, pi: np.ndarray, pj: np.ndarray):
    r0, r1, c0, c1 = layout.box
    w = layout.shape[1]
    pi = np.clip(pi, r0, r1)
    pj = np.clip(pj, c0, c1)
    i0 = np.clip(np.floor(pi), r0, max(r0, r1 - 1)).astype(np.intp)
    j0 = np.clip(np.floor(pj), c0, max(c0, c1 - 1)).astype(np.intp)
    fi = pi - i0
    fj = pj - j0
    i1 = np.minimum(i0 + 1, r1)
    j1 = np.minimum(j0 + 1, c1)
    idx = (i0 * w + j0, i0 * w + j1, i1 * w + j0, i1 * w + j1)
    return idx, fi, fj, pi, pj


def _bilinear(flat: np.ndarray, idx, fi, fj) -> np.ndarray:
    d00, d01, d10, d11 = (flat.take(k) for k in idx)
    return (1.0 - fi) * ((1.0 - fj) * d00 + fj * d01) + fi * ((1.0 - fj) * d10 + fj * d11)


def _sample_ok(layout: RayLayout, sl: slice, idx) -> np.ndarray:
    ok = np.arange(layout.samples)[None, :] < layout.count[sl][:, None]
    if layout.check_stencil:
        vflat = layout.valid.reshape(-1)
        for k in idx:
            ok = ok & vflat.take(k)
        if layout.terminate:
            ok = np.logical_and.accumulate(ok, axis=1)
    return ok


def _cross_with(vx, vy, vz, w):
    cx = vy * w[2] - vz * w[1]
    cy = vz * w[0] - vx * w[2]
    cz = vx * w[1] - vy * w[0]
    return cx, cy, cz


def _offsets(depth_flat, layout: RayLayout, pix, ii, jj, t):
    """Surface points at ray parameters ``t`` (pixels) relative to x_i."""
    h = layout.shape[0]
    s = layout.spacing
    pi = ii[..., None] + t * layout.u_row if t.ndim > ii.ndim else ii + t * layout.u_row
    pj = jj[..., None] + t * layout.u_col if t.ndim > jj.ndim else jj + t * layout.u_col
    idx, fi, fj, pi, pj = _stencil(layout, pi, pj)
    ds = _bilinear(depth_flat, idx, fi, fj)
    di = depth_flat.take(pix)
    if t.ndim > ii.ndim:
        jj, ii, di = jj[:, None], ii[:, None], di[:, None]
    # x_s - x_i with x = j s, y = (H - 1 - i) s, z = -depth
    v = (pj * s - jj * s, (h - 1 - pi) * s - (h - 1 - ii) * s, di - ds)
    return v, idx, fi, fj


def _first_crossing(depth_flat, layout: RayLayout, pix, ii, jj, vz, t, ok, omega):
    """Ray parameter where the ray first drops below the sampled surface, NaN if never.

    The last sample above the ray (or the point one pixel out) and the first
    one below bracket the crossing, which is then located by bisection on the
    interpolated surface.
    """
    slope = layout.spacing * omega[2] / math.hypot(omega[0], omega[1])
    under = ok & (vz - t * slope > 0)
    out = np.full(len(pix), np.nan)
    rows = np.flatnonzero(under.any(axis=1))
    if rows.size == 0:
        return out
    k = np.argmax(under[rows], axis=1)
    km = np.maximum(k - 1, 0)
    hi = t[rows, k]
    prev = (k > 0) & ok[rows, km]
    # without an earlier sample, bracket from one pixel out; closer crossings
    # lie on the pixel's own cells and count as self-intersection
    lo = np.where(prev, t[rows, km], np.minimum(SELF_CELL_PX, hi))
    if not prev.all():
        (_, _, gz), _, _, _ = _offsets(depth_flat, layout, pix[rows], ii[rows], jj[rows], lo)
        keep = prev | (gz - lo * slope <= 0)
        rows, lo, hi = rows[keep], lo[keep], hi[keep]
        if rows.size == 0:
            return out
    pix, ii, jj = pix[rows], ii[rows], jj[rows]
    for _ in range(CROSSING_BISECTIONS):
        mid = 0.5 * (lo + hi)
        (_, _, gz), _, _, _ = _offsets(depth_flat, layout, pix, ii, jj, mid)
        below = gz - mid * slope > 0
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)
    out[rows] = hi
    return out


def _chunk_min(depth_flat: np.ndarray, omega: np.ndarray, layout: RayLayout, sl: slice,
               crossing: np.ndarray | None = None):
    """Per pixel (d_min, argmin, crossing t); argmin == samples marks the crossing point."""
    pix = layout.pixels[sl]
    ii, jj, _, _, t = _positions(layout, sl)
    (vx, vy, vz), idx, _, _ = _offsets(depth_flat, layout, pix, ii, jj, t)
    ok = _sample_ok(layout, sl, idx)
    cx, cy, cz = _cross_with(vx, vy, vz, omega)
    dist = np.sqrt(cx * cx + cy * cy + cz * cz)
    dist = np.where(ok, dist, np.inf)
    if layout.refine:
        if crossing is None:
            tc = _first_crossing(depth_flat, layout, pix, ii, jj, vz, t, ok, omega)
        else:
            tc = crossing[sl]
        has = np.isfinite(tc)
        (ux, uy, uz), _, _, _ = _offsets(depth_flat, layout, pix, ii, jj, np.where(has, tc, 0.0))
        ex, ey, ez = _cross_with(ux, uy, uz, omega)
        extra = np.where(has, np.sqrt(ex * ex + ey * ey + ez * ez), np.inf)
        dist = np.concatenate([dist, extra[:, None]], axis=1)
    else:
        tc = np.full(len(pix), np.nan)
    arg = np.argmin(dist, axis=1)
    dmin = dist[np.arange(dist.shape[0]), arg]
    arg = np.where(np.isfinite(dmin), arg, -1)
    return dmin, arg, tc


def _min_distance_values(depth_flat, omega, layout: RayLayout, workers: int | None = None,
                         crossing: np.ndarray | None = None):
    """(d_min, argmin, crossing) for every layout pixel.

    A given ``crossing`` array freezes the refined crossing positions, as the
    regular sample positions are frozen by the layout.
    """
    n = layout.pixels.size
    dmin = np.full(n, np.inf)
    arg = np.full(n, -1, dtype=np.int64)
    tc = np.full(n, np.nan)
    if layout.degenerate or n == 0:
        return dmin, arg, tc
    slices = [slice(a, min(a + CHUNK_PIXELS, n)) for a in range(0, n, CHUNK_PIXELS)]

    def run(sl):
        dmin[sl], arg[sl], tc[sl] = _chunk_min(depth_flat, omega, layout, sl, crossing)

    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(slices) == 1:
        for sl in slices:
            run(sl)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, slices))
    return dmin, arg, tc


def _argmin_geometry(depth_flat, layout: RayLayout, arg: np.ndarray, crossing: np.ndarray):
    """Recompute the winning sample of each pixel (arg >= 0 required)."""
    sel = np.flatnonzero(arg >= 0)
    pix = layout.pixels[sel]
    ii, jj = np.divmod(pix, layout.shape[1])
    a = arg[sel]
    t = np.where(a == layout.samples, np.nan_to_num(crossing[sel]),
                 layout.start_px + layout.step_px[sel] * a.astype(np.float64))
    v, idx, fi, fj = _offsets(depth_flat, layout, pix, ii, jj, t)
    wts = ((1.0 - fi) * (1.0 - fj), (1.0 - fi) * fj, fi * (1.0 - fj), fi * fj)
    return sel, pix, idx, wts, v


def ray_min_distance(depth, omega, layout: RayLayout, workers: int | None = None):
    """Generic kernel: per valid pixel (d_min, argmin); d_min = inf if no samples.

    With ``Var`` inputs the minimum is recorded as a single tape node whose
    adjoint routes the gradient through the argmin sample only.
    """
    if not isinstance(depth, T.Var) and not isinstance(omega, T.Var):
        dmin, arg, _ = _min_distance_values(np.asarray(depth).reshape(-1), np.asarray(omega),
                                            layout, workers)
        return dmin, arg
    tape = depth.tape if isinstance(depth, T.Var) else omega.tape
    dv, wv = T.value(depth), T.value(omega)
    dmin, arg, tc = _min_distance_values(dv.reshape(-1), wv, layout, workers)
    hw = dv.size
    d_is, w_is = isinstance(depth, T.Var), isinstance(omega, T.Var)
    ins = [v for v in (depth, omega) if isinstance(v, T.Var)]

    def fn(*vals):
        it = iter(vals)
        d = next(it) if d_is else dv
        w = next(it) if w_is else wv
        return _min_distance_values(d.reshape(-1), w, layout, workers, tc)[0]

    def vjp(g):
        sel, pix, idx, wts, (vx, vy, vz) = _argmin_geometry(dv.reshape(-1), layout, arg, tc)
        cx, cy, cz = _cross_with(vx, vy, vz, wv)
        d = dmin[sel]
        gs = g[sel]
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(d > 0, gs / d, 0.0)
        gcx, gcy, gcz = k * cx, k * cy, k * cz
        res = []
        if d_is:
            # dL/dv = w x g_c; only v_z depends on depth
            gvz = wv[0] * gcy - wv[1] * gcx
            wts_all = np.concatenate([-gvz * wk for wk in wts] + [gvz])
            idx_all = np.concatenate(list(idx) + [pix])
            gd = np.bincount(idx_all, weights=wts_all, minlength=hw)
            res.append(gd.reshape(dv.shape))
        if w_is:
            # dL/dw = g_c x v
            res.append(np.array([np.sum(gcy * vz - gcz * vy),
                                 np.sum(gcz * vx - gcx * vz),
                                 np.sum(gcx * vy - gcy * vx)]))
        return tuple(res)

    out = tape.record("min_distance", ins, dmin, fn, vjp, argmin=arg, layout=layout,
                      crossing=tc)
    return out, arg


def _visibility_values(d: np.ndarray) -> np.ndarray:
    # 1 - 4e/(1+e)^2 with e = exp(-d) equals ((1-e)/(1+e))^2 = tanh(d/2)^2,
    # which stays inside [0, 1] under rounding
    t = np.tanh(0.5 * d)
    return t * t


def visibility_function(d_scaled):
    """Generic kernel of the sigmoid-shaped visibility in scaled distance."""
    if not isinstance(d_scaled, T.Var):
        return _visibility_values(np.asarray(d_scaled, dtype=np.float64))
    dv = d_scaled.value

    def vjp(g):
        t = np.tanh(0.5 * dv)
        return (g * (t * (1.0 - t * t)),)

    return d_scaled.tape.record("visibility", [d_scaled], _visibility_values(dv),
                                _visibility_values, vjp)


def visibility(d_min, cfg: ShadowConfig | None = None, pixel_spacing: float = 1.0):
    """Visibility for a raw d_min (scalar or array); +inf maps to exactly 1."""
    cfg = cfg or ShadowConfig()
    out = visibility_function(np.asarray(d_min, dtype=np.float64) * cfg.resolved_scale(pixel_spacing))
    return float(out) if np.ndim(out) == 0 else out


def sample_ray_points(p: PointGrid, pixel: tuple[int, int], omega: LightDirection,
                      cfg: ShadowConfig | None = None) -> np.ndarray:
    """3-D surface points sampled along the projected shadow ray of ``pixel``.

    Returns a (k, 3) array, k = 0 when the projection is degenerate or the
    ray leaves the valid bounding box before the start offset.
    """
    cfg = cfg or ShadowConfig()
    i, j = pixel
    h, w = p.shape
    if not (0 <= i < h and 0 <= j < w) or not p.valid[i, j]:
        raise ValueError(f"pixel outside valid region: {pixel}")
    layout = ray_layout(p.valid, p.pixel_spacing, omega.vec, cfg, pixels=np.array([i * w + j]))
    if layout.degenerate:
        return np.zeros((0, 3))
    depth_flat = -p.points[..., 2].reshape(-1)
    sl = slice(0, 1)
    _, _, pi, pj, _ = _positions(layout, sl)
    idx, fi, fj, pi, pj = _stencil(layout, pi, pj)
    ok = _sample_ok(layout, sl, idx)[0]
    ds = _bilinear(depth_flat, idx, fi, fj)[0]
    s = p.pixel_spacing
    pts = np.stack([pj[0] * s, (h - 1 - pi[0]) * s, -ds], axis=-1)
    return pts[ok]


def min_ray_distance(x_i, samples, omega) -> tuple[float, int]:
    """Smallest point-to-ray distance and first index attaining it.

    Empty ``samples`` gives ``(inf, -1)``: nothing can occlude.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if samples.shape[0] == 0:
        return math.inf, -1
    w = omega.vec if isinstance(omega, LightDirection) else np.asarray(omega, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    v = samples - x_i
    cx, cy, cz = _cross_with(v[:, 0], v[:, 1], v[:, 2], w)
    dist = np.sqrt(cx * cx + cy * cy + cz * cz)
    k = int(np.argmin(dist))
    return float(dist[k]), k


def estimate_shadow_mask(d: DepthMap, omega: LightDirection, cfg: ShadowConfig | None = None,
                         *, workers: int | None = None, layout: RayLayout | None = None) -> ShadowMask:
    """Soft shadow mask over the whole depth map (1 on invalid pixels).

    ``workers`` threads split the pixels into fixed chunks, so the result is
    byte-identical for any worker count.
    """
    cfg = cfg or ShadowConfig()
    omega.require_front()
    if layout is None:
        layout = ray_layout(d.valid, d.pixel_spacing, omega.vec, cfg)
    dmin, _ = ray_min_distance(d.values, omega.vec, layout, workers)
    m = visibility_function(dmin * cfg.resolved_scale(d.pixel_spacing))
    out = np.ones(d.values.size)
    out[layout.pixels] = m
    out = out.reshape(d.shape)
    out.flags.writeable = False
    return ShadowMask(out, d.valid)
