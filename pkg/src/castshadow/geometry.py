"""Depth maps, point grids and surface normals.

Camera convention: orthographic, looking down -z from +z. Pixel (i, j) maps
to world (j * s, (H - 1 - i) * s, -depth), so image row 0 is the top of the
frame and smaller depth means a point closer to the camera.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray
    pixel_spacing: float = 1.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {values.shape}")
        h, w = values.shape
        if h < 2 or w < 2:
            raise ValueError(f"depth map must be at least 2x2, got {h}x{w}")
        valid = np.array(np.broadcast_to(self.valid, values.shape), dtype=bool)
        if not np.all(np.isfinite(values[valid])):
            raise ValueError("depth values must be finite on valid pixels")
        if not self.pixel_spacing > 0:
            raise ValueError(f"pixel_spacing must be positive, got {self.pixel_spacing}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))
        object.__setattr__(self, "pixel_spacing", float(self.pixel_spacing))

    @classmethod
    def full(cls, values, pixel_spacing: float = 1.0) -> "DepthMap":
        return cls(values, np.ones(np.shape(values), dtype=bool), pixel_spacing)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values) -> "DepthMap":
        return DepthMap(values, self.valid, self.pixel_spacing)


@dataclass(frozen=True, eq=False)
class PointGrid:
    points: np.ndarray  # (H, W, 3)
    valid: np.ndarray
    pixel_spacing: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape[:2]


@dataclass(frozen=True, eq=False)
class NormalMap:
    normals: np.ndarray  # (H, W, 3), zero on invalid pixels
    valid: np.ndarray
    degenerate: np.ndarray  # pixels whose tangent cross product vanished


def pixel_xy(shape: tuple[int, int], spacing: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    ii, jj = np.mgrid[0:h, 0:w]
    return jj * spacing, (h - 1 - ii) * spacing


def points_from_depth(depth, spacing: float):
    """Generic kernel: (H, W) depth (ndarray or Var) -> (H, W, 3) points."""
    x, y = pixel_xy(np.shape(T.value(depth)), spacing)
    return T.stack([x, y, -depth], axis=-1)


def depth_to_points(d: DepthMap) -> PointGrid:
    pts = points_from_depth(d.values, d.pixel_spacing)
    return PointGrid(_frozen(pts), d.valid, d.pixel_spacing)


@dataclass(frozen=True)
class Stencil:
    """Difference stencil on the flattened grid, one row per valid pixel.

    Tangent along an axis is ``(P[a] - P[b]) * c``: central differences
    (c = 0.5) where both neighbours are valid, one-sided (c = 1) at region
    borders, and c = 0 when the pixel has no neighbour on that axis.
    """
    pixels: np.ndarray
    ax: np.ndarray
    bx: np.ndarray
    cx: np.ndarray
    ay: np.ndarray
    by: np.ndarray
    cy: np.ndarray


def difference_stencil(valid: np.ndarray) -> Stencil:
    h, w = valid.shape
    pad = np.pad(valid, 1, constant_values=False)
    ii, jj = np.nonzero(valid)
    flat = ii * w + jj
    right = pad[ii + 1, jj + 2]
    left = pad[ii + 1, jj]
    up = pad[ii, jj + 1]      # row i - 1, which is +y
    down = pad[ii + 2, jj + 1]

    def axis(plus_ok, minus_ok, plus_idx, minus_idx):
        a = np.where(plus_ok, plus_idx, flat)
        b = np.where(minus_ok, minus_idx, flat)
        c = np.where(plus_ok & minus_ok, 0.5, np.where(plus_ok | minus_ok, 1.0, 0.0))
        return a, b, c

    ax, bx, cx = axis(right, left, flat + 1, flat - 1)
    ay, by, cy = axis(up, down, flat - w, flat + w)
    return Stencil(flat, ax, bx, cx, ay, by, cy)


def cross3(a, b):
    a0, a1, a2 = a[:, 0], a[:, 1], a[:, 2]
    b0, b1, b2 = b[:, 0], b[:, 1], b[:, 2]
    return T.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def norm3(v):
    v0, v1, v2 = v[:, 0], v[:, 1], v[:, 2]
    return T.sqrt(v0 * v0 + v1 * v1 + v2 * v2)


_EZ = np.array([0.0, 0.0, 1.0])


def normals_from_points(points_flat, st: Stencil):
    """Generic kernel returning (normals over ``st.pixels``, degenerate flags)."""
    tx = (points_flat[st.ax] - points_flat[st.bx]) * st.cx[:, None]
    ty = (points_flat[st.ay] - points_flat[st.by]) * st.cy[:, None]
    c = cross3(tx, ty)
    length = norm3(c)
    degenerate = T.value(length) <= 0.0
    n = c / T.where(degenerate, 1.0, length)[:, None]
    # height fields always give n_z > 0 here; the flip only guards odd masks
    flip = np.where(T.value(n)[:, 2] < 0.0, -1.0, 1.0)
    if np.any(flip < 0):
        n = n * flip[:, None]
    n = T.where(degenerate[:, None], _EZ, n)
    return n, degenerate


def compute_normals(p: PointGrid, valid: np.ndarray | None = None) -> NormalMap:
    valid = p.valid if valid is None else np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("valid region is empty")
    h, w = p.shape
    st = difference_stencil(valid)
    n, deg = normals_from_points(p.points.reshape(-1, 3), st)
    normals = np.zeros((h * w, 3))
    normals[st.pixels] = n
    degenerate = np.zeros(h * w, dtype=bool)
    degenerate[st.pixels] = deg
    return NormalMap(_frozen(normals.reshape(h, w, 3)), valid, _frozen(degenerate.reshape(h, w)))
