"""Adam fitting of lighting and depth against a target image."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import backward, record_and_render, tangent_project
from .geometry import DepthMap
from .losses import LossWeights, dssim_loss, recon_loss
from .shading import ImagePlane, LightingParams
from .shadow import LightDirection, ShadowConfig

FREE_PARAMS = ("omega", "ambient", "directional", "depth")
IMAGE_LOSSES = ("recon", "dssim")


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update of every parameter that has a gradient.

    ``omega`` moves in the tangent plane of the unit sphere and is then
    renormalized; ``ambient`` and ``directional`` are clamped at 0.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(params[name]):
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = dict(params)
    for name, g in grads.items():
        p = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if name == "omega":
            g = tangent_project(g, p)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        new = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if name == "omega":
            new = new / np.linalg.norm(new)
        elif name in ("ambient", "directional"):
            new = np.maximum(new, 0.0)
        out[name] = float(new) if np.ndim(params[name]) == 0 else new
    return out


@dataclass
class FitProblem:
    target: np.ndarray                   # (H, W, C) image
    depth: DepthMap
    albedo: ImagePlane
    init: LightingParams
    free: tuple = ("omega",)
    weights: LossWeights = field(default_factory=LossWeights)
    losses: tuple = IMAGE_LOSSES
    cfg: ShadowConfig = field(default_factory=ShadowConfig)
    iterations: int = 2000
    tol: float = 0.0                     # stop once |loss change| < tol; 0 disables
    lr: float = 1e-4
    mask: np.ndarray | None = None       # supervised pixels; defaults to the depth mask

    def __post_init__(self) -> None:
        self.free = tuple(self.free)
        if not self.free:
            raise ValueError("at least one free parameter is required")
        for f in self.free:
            if f not in FREE_PARAMS:
                raise ValueError(f"unknown free parameter {f!r}; choose from {', '.join(FREE_PARAMS)}")
        for name in self.losses:
            if name not in IMAGE_LOSSES:
                raise ValueError(f"loss {name!r} cannot be fitted against an image; use {IMAGE_LOSSES}")
        if self.iterations < 0:
            raise ValueError(f"iteration budget must be >= 0, got {self.iterations}")
        if self.tol < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tol}")
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.ndim == 2:
            self.target = self.target[..., None]
        if self.target.shape[:2] != self.depth.shape:
            raise ValueError(f"target {self.target.shape[:2]} and depth {self.depth.shape} dimensions differ")


@dataclass
class FitResult:
    lighting: LightingParams
    depth: DepthMap
    losses: list
    iterations: int

    @property
    def params(self) -> dict:
        return {"omega": self.lighting.omega.vec.copy(), "ambient": self.lighting.ambient,
                "directional": self.lighting.directional, "depth": self.depth.values}


def _image_loss(problem: FitProblem, image, mask):
    w = problem.weights
    total = 0.0
    if "recon" in problem.losses and w.recon:
        total = total + w.recon * recon_loss(image, problem.target, mask)
    if "dssim" in problem.losses and w.dssim:
        total = total + w.dssim * dssim_loss(image, problem.target)
    return total


def _lighting(params: dict, base: LightingParams) -> LightingParams:
    return replace(base, omega=LightDirection.from_vector(params["omega"]),
                   ambient=float(params["ambient"]), directional=float(params["directional"]))


def fit(problem: FitProblem) -> FitResult:
    """Run Adam on the free parameters until the budget or tolerance is met.

    The loss trace holds the loss at each iterate before its update, so a
    zero budget returns the initialization and an empty trace.
    """
    params = {"omega": problem.init.omega.vec.copy(), "ambient": problem.init.ambient,
              "directional": problem.init.directional, "depth": problem.depth.values.copy()}
    mask = problem.depth.valid if problem.mask is None else np.asarray(problem.mask, dtype=bool)
    state = AdamState(lr=problem.lr)
    trace: list[float] = []
    depth = problem.depth
    it = 0
    for it in range(problem.iterations):
        light = _lighting(params, problem.init)
        depth = problem.depth.with_values(params["depth"]) if "depth" in problem.free else problem.depth
        _, rec = record_and_render(depth, problem.albedo, light, problem.cfg)
        loss = _image_loss(problem, rec.image, mask)
        value = float(loss.value)
        if not math.isfinite(value):
            raise FloatingPointError(f"loss became non-finite at iteration {it}")
        trace.append(value)
        if len(trace) > 1 and problem.tol > 0 and abs(trace[-2] - trace[-1]) < problem.tol:
            break
        g = backward(rec, 1.0, output=loss).as_dict()
        params = adam_step(state, params, {k: g[k] for k in problem.free})
    else:
        it = problem.iterations
    light = _lighting(params, problem.init)
    if "depth" in problem.free:
        depth = problem.depth.with_values(params["depth"])
    return FitResult(light, depth, trace, it)
