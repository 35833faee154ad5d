"""Synthetic height-field scenes.

Scenes span 4 world units across their width by default, so the pixel
spacing is ``4 / width``. Analytic coordinates are centred on pixel
``(H // 2, W // 2)``; ``u`` grows to the right and ``v`` upward.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .geometry import DepthMap

SCENE_KINDS = ("flat", "step", "gaussian_bump", "nose_ridge")
DOMAIN_WIDTH = 4.0

_DEFAULTS = {
    "flat": {},
    "step": {"h": 1.0},
    "gaussian_bump": {"amp": 1.0, "sigma": 1.0},
    "nose_ridge": {"amp": 0.5, "sigma": 0.18},
}


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    width: int
    height: int
    params: dict = field(default_factory=dict)
    pixel_spacing: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {', '.join(SCENE_KINDS)}")
        if self.width < 8 or self.height < 8:
            raise ValueError(f"scene resolution must be at least 8x8, got {self.width}x{self.height}")
        allowed = set(_DEFAULTS[self.kind])
        for k, v in self.params.items():
            if k not in allowed:
                raise ValueError(f"scene {self.kind!r} has no parameter {k!r}")
            if not v > 0:
                raise ValueError(f"scene parameter {k!r} must be positive, got {v}")
        if self.pixel_spacing is not None and not self.pixel_spacing > 0:
            raise ValueError(f"pixel spacing must be positive, got {self.pixel_spacing}")

    @property
    def spacing(self) -> float:
        return DOMAIN_WIDTH / self.width if self.pixel_spacing is None else self.pixel_spacing

    def param(self, name: str) -> float:
        return float(self.params.get(name, _DEFAULTS[self.kind][name]))


def parse_scene(text: str) -> SceneSpec:
    """Parse ``kind:N[,key=value...]`` or ``kind:WxH[,...]``; ``spacing=`` sets pixel spacing."""
    m = re.fullmatch(r"\s*([a-z_]+)\s*:\s*(\d+)(?:x(\d+))?\s*((?:,\s*[a-z_]+\s*=\s*[^,]+)*)\s*", text)
    if not m:
        raise ValueError(f"cannot parse scene {text!r}; expected kind:N[,key=value...]")
    kind, w, h, rest = m.group(1), int(m.group(2)), m.group(3), m.group(4)
    h = int(h) if h else w
    params, spacing = {}, None
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, val = (s.strip() for s in item.split("=", 1))
        try:
            num = float(val)
        except ValueError:
            raise ValueError(f"scene parameter {key!r}: {val!r} is not a number") from None
        if key == "spacing":
            spacing = num
        else:
            params[key] = num
    return SceneSpec(kind, w, h, params, spacing)


def coordinates(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = np.mgrid[0:spec.height, 0:spec.width]
    s = spec.spacing
    return (jj - spec.width // 2) * s, (spec.height // 2 - ii) * s


def height_field(spec: SceneSpec) -> np.ndarray:
    u, v = coordinates(spec)
    if spec.kind == "flat":
        return np.zeros_like(u)
    if spec.kind == "step":
        return np.where(u >= 0, spec.param("h"), 0.0)
    if spec.kind == "gaussian_bump":
        a, sig = spec.param("amp"), spec.param("sigma")
        return a * np.exp(-(u * u + v * v) / (sig * sig))
    # broad face dome plus a narrow vertical ridge standing in for a nose
    a, sig = spec.param("amp"), spec.param("sigma")
    face = 0.6 * np.exp(-((u / 1.2) ** 2 + (v / 1.6) ** 2))
    nose = a * np.exp(-(u / sig) ** 2 - ((v + 0.1) / 0.55) ** 4)
    return face + nose


def face_mask(spec: SceneSpec) -> np.ndarray:
    if spec.kind != "nose_ridge":
        return np.ones((spec.height, spec.width), dtype=bool)
    u, v = coordinates(spec)
    return (u / 1.5) ** 2 + (v / 1.9) ** 2 <= 1.0


def make_depth(spec: SceneSpec) -> DepthMap:
    """Depth = peak height - height, so the highest point sits at depth 0."""
    hf = height_field(spec)
    return DepthMap(hf.max() - hf, face_mask(spec), spec.spacing)
