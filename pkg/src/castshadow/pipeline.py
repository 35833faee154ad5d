"""Undifferentiated relighting: depth -> normals -> shadow mask -> shading -> image."""
from __future__ import annotations

from dataclasses import dataclass

from .geometry import DepthMap, NormalMap, compute_normals, depth_to_points
from .shading import ImagePlane, LightingParams, render, shadowed_shading
from .shadow import ShadowConfig, ShadowMask, estimate_shadow_mask


@dataclass(frozen=True)
class Relit:
    image: ImagePlane
    shading: ImagePlane
    mask: ShadowMask
    normals: NormalMap


def relight(depth: DepthMap, albedo: ImagePlane, light: LightingParams,
            cfg: ShadowConfig | None = None, *, workers: int | None = None) -> Relit:
    cfg = cfg or ShadowConfig()
    normals = compute_normals(depth_to_points(depth))
    mask = estimate_shadow_mask(depth, light.omega, cfg, workers=workers)
    shading = shadowed_shading(normals, light, mask)
    return Relit(render(albedo, shading), shading, mask, normals)
