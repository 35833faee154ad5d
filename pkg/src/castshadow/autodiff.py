"""Reverse-mode gradients of rendered images.

``record_and_render`` runs the same kernels as :func:`castshadow.pipeline.relight`
on tape variables, so its forward image is bit-identical to the plain
pipeline. Shadow-ray sample positions are held constant: gradients reach the
mask through the sampled depth values, the pixel's own depth and the light
direction in the cross product, but not through where the samples land.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tape as T
from .geometry import DepthMap, difference_stencil, normals_from_points, points_from_depth
from .losses import recon_loss
from .shading import ImagePlane, LightingParams, lambert, shade
from .shadow import (RayLayout, ShadowConfig, _argmin_geometry, _cross_with, _min_distance_values, ray_layout,
                     ray_min_distance, visibility_function)
from .tape import Tape, Var

__all__ = [
    "Tape", "Var", "GradientSet", "Recording", "record_and_render", "backward",
    "tangent_project", "finite_difference_check", "GradCheckReport",
]


def tangent_project(g: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Remove the component of ``g`` along the unit vector ``omega``."""
    return g - np.dot(g, omega) * omega


@dataclass
class GradientSet:
    depth: np.ndarray
    albedo: np.ndarray
    omega: np.ndarray        # projected onto the tangent plane at omega
    omega_raw: np.ndarray
    ambient: float
    directional: float

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"depth": self.depth, "albedo": self.albedo, "omega": self.omega,
                "ambient": np.asarray(self.ambient), "directional": np.asarray(self.directional)}


@dataclass
class Recording:
    """Tape plus the handles needed to inspect or re-evaluate it."""
    tape: Tape
    image: Var
    mask: Var
    d_min: Var
    argmin: np.ndarray
    layout: RayLayout
    pixels: np.ndarray
    shape: tuple[int, int]
    cosine: Var


def record_and_render(d: DepthMap, albedo: ImagePlane, light: LightingParams,
                      cfg: ShadowConfig | None = None, *, layout: RayLayout | None = None,
                      workers: int | None = None) -> tuple[ImagePlane, Recording]:
    cfg = cfg or ShadowConfig()
    if albedo.shape != d.shape:
        raise ValueError(f"albedo {albedo.shape} and depth {d.shape} dimensions differ")
    light.omega.require_front()
    tape = Tape()
    depth = tape.leaf("depth", d.values)
    alb = tape.leaf("albedo", albedo.values)
    omega = tape.leaf("omega", light.omega.vec)
    ia = tape.leaf("ambient", light.ambient)
    id_ = tape.leaf("directional", light.directional)

    h, w = d.shape
    st = difference_stencil(d.valid)
    points = points_from_depth(depth, d.pixel_spacing)
    normals, _ = normals_from_points(points.reshape(-1, 3), st)
    lam = lambert(normals, omega)

    if layout is None:
        layout = ray_layout(d.valid, d.pixel_spacing, light.omega.vec, cfg)
    d_min, argmin = ray_min_distance(depth, omega, layout, workers)
    mask = visibility_function(d_min * cfg.resolved_scale(d.pixel_spacing))
    tape.find("min_distance")[-1].ctx["occluding"] = mask.value < 0.5

    s = shade(lam, ia, id_, mask)
    s_full = T.scatter(s, st.pixels, h * w).reshape(h, w, 1)
    image = alb * s_full
    tape.outputs.update(image=image, mask=mask, d_min=d_min)
    cosine = tape.find("relu")[-1].inputs[0]
    rec = Recording(tape, image, mask, d_min, argmin, layout, st.pixels, (h, w), cosine)
    return ImagePlane(image.value, d.valid), rec


def _gradient_set(rec: Recording, grads: dict[str, np.ndarray]) -> GradientSet:
    raw = np.asarray(grads["omega"], dtype=np.float64)
    omega = rec.tape.leaves["omega"].value
    return GradientSet(
        depth=grads["depth"], albedo=grads["albedo"], omega=tangent_project(raw, omega),
        omega_raw=raw, ambient=float(grads["ambient"]), directional=float(grads["directional"]))


def backward(rec: Recording, seed, output: Var | None = None) -> GradientSet:
    """Adjoints of all inputs given dL/d(output); output defaults to the image."""
    out = rec.image if output is None else output
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != out.shape and seed.ndim != 0:
        if out is rec.image and seed.shape == out.shape[:2] and out.shape[2] == 1:
            seed = seed[..., None]
        else:
            raise ValueError(f"seed shape {seed.shape} does not match output {out.shape}")
    if not np.all(np.isfinite(seed)):
        raise ValueError("seed contains non-finite values")
    return _gradient_set(rec, rec.tape.grad_of(out, seed))


# -- finite-difference checking ------------------------------------------------

@dataclass
class GradCheckEntry:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float
    excluded_pixels: tuple = ()

    @property
    def stable(self) -> bool:
        return self.numeric == self.numeric  # NaN marks a coordinate with nothing left to compare


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)
    tolerances: dict[str, float] = field(default_factory=dict)

    def tolerance(self, param: str) -> float:
        return self.tolerances.get(param, self.tolerances.get("default", 1e-3))

    def max_rel_error(self, param: str | None = None) -> float:
        errs = [e.rel_error for e in self.entries if e.stable and (param is None or e.param == param)]
        return max(errs) if errs else 0.0

    @property
    def excluded_pixels(self) -> set[tuple[int, int]]:
        return {p for e in self.entries for p in e.excluded_pixels}

    @property
    def passed(self) -> bool:
        return all(e.rel_error < self.tolerance(e.param) for e in self.entries if e.stable)

    def summary(self) -> str:
        lines = []
        for p in dict.fromkeys(e.param for e in self.entries):
            ents = [e for e in self.entries if e.param == p]
            npx = len({q for e in ents for q in e.excluded_pixels})
            lines.append(f"{p}: {len(ents)} coords, {npx} unstable pixels excluded, "
                         f"max rel err {self.max_rel_error(p):.3e} (tol {self.tolerance(p):.0e})")
        return "\n".join(lines)


def _pixel_branches(rec: Recording, values: dict[int, np.ndarray]):
    """Per valid pixel: side of the Lambert clamp, index of the argmin sample,
    and the cross product v x w at that sample (zero where there is none)."""
    depth = values[rec.tape.leaves["depth"].id].reshape(-1)
    omega = values[rec.tape.leaves["omega"].id]
    crossing = rec.tape.find("min_distance")[-1].ctx["crossing"]
    _, arg, _ = _min_distance_values(depth, omega, rec.layout, crossing=crossing)
    sel, _, _, _, v = _argmin_geometry(depth, rec.layout, arg, crossing)
    cross = np.zeros((len(arg), 3))
    cross[sel] = np.stack(_cross_with(*v, omega), axis=-1)
    return np.sign(values[rec.cosine.id]), arg, cross


# a central difference carries rounding noise of about eps * |L| / h, so it
# resolves a gradient to 1e-3 only above 1e3 times that; below this scale
# the error is measured against the scale instead of the gradient itself
FD_RESOLUTION = 1e3


def _rel_error(a: float, n: float, floor: float = 1e-300) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def finite_difference_check(depth: DepthMap, albedo: ImagePlane, light: LightingParams,
                            target: np.ndarray, cfg: ShadowConfig | None = None, *,
                            params=("depth", "ambient", "directional", "omega"),
                            depth_pixels: int | list[tuple[int, int]] = 100,
                            h: float = 1e-4, tol: float | dict[str, float] | None = None,
                            loss: Callable | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of a per-pixel loss with central differences.

    ``loss(image, pixel_mask)`` defaults to the masked MSE against ``target``.
    For every coordinate, pixels whose ±h perturbation changes a discrete
    branch (argmin sample, side of the Lambert clamp, or the direction of the
    winning cross product, i.e. the kink of the norm at zero) are dropped
    from the loss before comparing, and reported in ``excluded_pixels``. Sample
    positions, including refined crossing points, stay frozen at their
    unperturbed values. Omega is perturbed
    along two tangent directions of the unit sphere.
    """
    cfg = cfg or ShadowConfig()
    loss = loss or (lambda img, m: recon_loss(img, target, m))
    if tol is None:
        tol = {"ambient": 1e-6, "directional": 1e-6, "default": 1e-3}
    elif not isinstance(tol, dict):
        tol = {"default": float(tol)}

    _, rec = record_and_render(depth, albedo, light, cfg)
    tape = rec.tape
    base = tape.replay()
    base_cos, base_arg, base_cross = _pixel_branches(rec, base)
    valid = depth.valid

    def loss_grad(img: np.ndarray, m: np.ndarray) -> np.ndarray:
        lt = Tape()
        iv = lt.leaf("image", img)
        return lt.grad_of(loss(iv, m))["image"]

    base_grads = backward(rec, loss_grad(rec.image.value, valid)).as_dict()
    report = GradCheckReport(tolerances=dict(tol))

    def probe(param, index, plus, minus, pick):
        vp, vm = tape.replay(plus), tape.replay(minus)
        unstable = np.zeros(len(rec.pixels), dtype=bool)
        for vals in (vp, vm):
            cos, arg, cross = _pixel_branches(rec, vals)
            unstable |= (cos != base_cos) | (arg != base_arg)
            # |v x w| has a kink where the cross product passes through zero
            unstable |= np.einsum("ij,ij->i", cross, base_cross) < 0
        m = valid.copy()
        bad = rec.pixels[unstable]
        m.reshape(-1)[bad] = False
        excluded = tuple(tuple(int(c) for c in np.unravel_index(k, depth.shape)) for k in bad)
        if not m.any():
            report.entries.append(GradCheckEntry(param, index, float("nan"), float("nan"),
                                                 float("nan"), excluded))
            return
        grads = base_grads if not unstable.any() else \
            backward(rec, loss_grad(rec.image.value, m)).as_dict()
        analytic = float(pick(grads))
        lp, lm = float(loss(vp[rec.image.id], m)), float(loss(vm[rec.image.id], m))
        numeric = (lp - lm) / (2.0 * h)
        floor = FD_RESOLUTION * np.finfo(float).eps * max(abs(lp), abs(lm)) / h
        report.entries.append(GradCheckEntry(param, index, analytic, numeric,
                                             _rel_error(analytic, numeric, floor), excluded))

    if "depth" in params:
        if isinstance(depth_pixels, int):
            rng = np.random.default_rng(seed)
            cand = np.flatnonzero(valid)
            pick = rng.choice(cand, size=min(depth_pixels, cand.size), replace=False)
            coords = [tuple(int(c) for c in np.unravel_index(k, depth.shape)) for k in np.sort(pick)]
        else:
            coords = [tuple(c) for c in depth_pixels]
        for ij in coords:
            dp = depth.values.copy()
            dm = depth.values.copy()
            dp[ij] += h
            dm[ij] -= h
            probe("depth", ij, {"depth": dp}, {"depth": dm}, lambda g, ij=ij: g["depth"][ij])

    for name in ("ambient", "directional"):
        if name in params:
            v = float(tape.leaves[name].value)
            probe(name, (), {name: v + h}, {name: v - h}, lambda g, name=name: g[name])

    if "omega" in params:
        w = light.omega.vec
        e1 = np.cross(w, [0.0, 0.0, 1.0] if abs(w[2]) < 0.9 else [1.0, 0.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(w, e1)
        for k, e in enumerate((e1, e2)):
            probe("omega", (k,), {"omega": np.cos(h) * w + np.sin(h) * e},
                  {"omega": np.cos(h) * w - np.sin(h) * e}, lambda g, e=e: np.dot(g["omega"], e))
    return report
