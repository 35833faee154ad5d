"""Lambertian shading with ambient light and cast-shadow masking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .geometry import NormalMap
from .shadow import LightDirection, ShadowMask

MAX_TOTAL_INTENSITY = 4.0


@dataclass(frozen=True)
class LightingParams:
    omega: LightDirection
    ambient: float = 0.5
    directional: float = 0.5
    max_total: float = MAX_TOTAL_INTENSITY

    def __post_init__(self) -> None:
        if not (self.ambient >= 0 and self.directional >= 0):
            raise ValueError(f"intensities must be >= 0, got i_a={self.ambient}, i_d={self.directional}")
        if self.ambient + self.directional > self.max_total:
            raise ValueError(f"i_a + i_d = {self.ambient + self.directional} exceeds {self.max_total}")


@dataclass(frozen=True, eq=False)
class ImagePlane:
    values: np.ndarray  # (H, W, C), linear light
    valid: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3 or v.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got {v.shape}")
        valid = np.array(np.broadcast_to(self.valid, v.shape[:2]), dtype=bool)
        if not np.all(np.isfinite(v[valid])):
            raise ValueError("image values must be finite")
        v.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def constant(cls, shape: tuple[int, int], value, channels: int = 3) -> "ImagePlane":
        v = np.broadcast_to(np.asarray(value, dtype=np.float64), (channels,))
        return cls(np.broadcast_to(v, shape + (channels,)), np.ones(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def lambert(normals, omega):
    """Generic kernel: clamped cosine max(0, <n, w>) for (N, 3) normals."""
    cos = normals[:, 0] * omega[0] + normals[:, 1] * omega[1] + normals[:, 2] * omega[2]
    return T.relu(cos)


def shade(lam, ambient, directional, mask=None):
    """Generic kernel: i_a + M * (i_d * lam); ``mask=None`` is the unshadowed form."""
    if mask is None:
        return ambient + directional * lam
    return ambient + mask * (directional * lam)


def shade_blend(lam, ambient, directional, mask):
    """The blended form M * s + (1 - M) * i_a of the same quantity."""
    s = ambient + directional * lam
    return mask * s + (1.0 - mask) * ambient


def _valid_lambert(n: NormalMap, omega: LightDirection) -> tuple[np.ndarray, np.ndarray]:
    pixels = np.flatnonzero(n.valid)
    lam = lambert(n.normals.reshape(-1, 3)[pixels], omega.vec)
    return pixels, lam


def _to_plane(pixels: np.ndarray, s: np.ndarray, valid: np.ndarray) -> ImagePlane:
    out = np.zeros(valid.size)
    out[pixels] = s
    return ImagePlane(out.reshape(valid.shape), valid)


def diffuse_shading(n: NormalMap, light: LightingParams) -> ImagePlane:
    pixels, lam = _valid_lambert(n, light.omega)
    return _to_plane(pixels, shade(lam, light.ambient, light.directional), n.valid)


def shadowed_shading(n: NormalMap, light: LightingParams, mask: ShadowMask) -> ImagePlane:
    pixels, lam = _valid_lambert(n, light.omega)
    m = mask.values.reshape(-1)[pixels]
    return _to_plane(pixels, shade(lam, light.ambient, light.directional, m), n.valid)


def render(albedo: ImagePlane, shading: ImagePlane) -> ImagePlane:
    if albedo.shape != shading.shape:
        raise ValueError(f"albedo {albedo.shape} and shading {shading.shape} dimensions differ")
    if shading.channels != 1:
        raise ValueError("shading must be single-channel")
    return ImagePlane(albedo.values * shading.values, shading.valid)
