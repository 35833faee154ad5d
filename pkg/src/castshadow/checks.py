"""Self-checks run by ``castshadow check`` and the acceptance suite.

Each gate returns a :class:`GateResult`; none of them raise on failure.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import finite_difference_check
from .oracle import compare_mask, trace_exact
from .pipeline import relight
from .scenes import SceneSpec, make_depth, parse_scene
from .shading import ImagePlane, LightingParams, shade, shade_blend
from .shadow import LightDirection, ShadowConfig, estimate_shadow_mask, visibility

ORACLE_ELEVATIONS = (30.0, 45.0, 60.0)
STEP_HEIGHTS = (0.5, 1.0, 2.0)


@dataclass
class GateResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f} s)"


def _timed(name, fn) -> GateResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    return GateResult(name, bool(ok), detail, time.perf_counter() - t0)


def visibility_gate() -> GateResult:
    def run():
        cfg = ShadowConfig(distance_scale=1.0)
        v0 = visibility(0.0, cfg)
        v3 = visibility(math.log(3.0), cfg)
        sweep = visibility(np.linspace(0.0, 20.0, 10_000), cfg)
        mono = bool(np.all(np.diff(sweep) >= 0))
        vinf = visibility(math.inf, cfg)
        ok = v0 == 0.0 and abs(v3 - 0.25) <= 1e-12 and mono and vinf == 1.0
        return ok, f"M(0)={v0!r} M(ln3)={v3!r} monotone={mono} M(inf)={vinf!r}"
    return _timed("visibility", run)


def shading_identity_gate(n: int = 1_000_000, seed: int = 0, ulps: int = 4) -> GateResult:
    def run():
        rng = np.random.default_rng(seed)
        nrm = rng.normal(size=(n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        w = rng.normal(size=(n, 3))
        w[:, 2] = np.abs(w[:, 2])
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        m = rng.random(n)
        ia = rng.random(n) * 2.0
        id_ = rng.random(n) * 2.0
        lam = np.maximum(np.einsum("ij,ij->i", nrm, w), 0.0)
        a = shade(lam, ia, id_, m)
        b = shade_blend(lam, ia, id_, m)
        err = np.abs(a - b) / np.spacing(np.maximum(np.abs(a), np.abs(b)))
        worst = float(err.max())
        return worst <= ulps, f"max {worst:.1f} ULP over {n} tuples (limit {ulps})"
    return _timed("shading identity", run)


def _agreement(spec: SceneSpec, omega: LightDirection, cfg: ShadowConfig) -> float:
    d = make_depth(spec)
    return compare_mask(estimate_shadow_mask(d, omega, cfg), trace_exact(d, omega))


def oracle_gate(scenes=None, cfg: ShadowConfig | None = None, azimuth: float = 0.0,
                elevations=ORACLE_ELEVATIONS, threshold: float = 0.95) -> GateResult:
    """Mask/oracle agreement; flat scenes must agree everywhere."""
    cfg = cfg or ShadowConfig()
    if scenes is None:
        scenes = [f"step:128,h={h:g}" for h in STEP_HEIGHTS] + ["gaussian_bump:128", "flat:128"]

    def run():
        worst, parts, ok = 1.0, [], True
        for text in scenes:
            spec = parse_scene(text) if isinstance(text, str) else text
            for el in elevations:
                a = _agreement(spec, LightDirection.from_angles(azimuth, el), cfg)
                need = 1.0 if spec.kind == "flat" else threshold
                if a < need:
                    ok = False
                    parts.append(f"{spec.kind}{spec.params or ''}@{el:g}={a:.4f}")
                worst = min(worst, a)
        detail = f"min agreement {worst:.4f}"
        return ok, detail + (f"; below gate: {', '.join(parts)}" if parts else "")
    return _timed("oracle agreement", run)


def shadow_length_px(mask: np.ndarray, spec: SceneSpec) -> int:
    """Dark (mask < 0.5) ground pixels on the centre row of a step scene."""
    row = spec.height // 2
    ground = np.arange(spec.width) < spec.width // 2
    return int(np.count_nonzero((mask[row] < 0.5) & ground))


def shadow_length_gate(cfg: ShadowConfig | None = None, tol_px: float = 2.0) -> GateResult:
    def run():
        spec = parse_scene("step:128,h=1")
        d = make_depth(spec)
        mask = estimate_shadow_mask(d, LightDirection.from_angles(0.0, 45.0), cfg or ShadowConfig())
        got = shadow_length_px(mask.values, spec)
        want = 1.0 / spec.spacing  # h / tan(45 deg) = 1 world unit
        return abs(got - want) <= tol_px, f"dark band {got} px, expected {want:g} +- {tol_px:g}"
    return _timed("shadow length", run)


def gradient_gate(scene: str = "gaussian_bump:48", cfg: ShadowConfig | None = None,
                  light: LightingParams | None = None, depth_pixels: int = 100,
                  seed: int = 0) -> GateResult:
    """Finite differences against tape gradients on a bump lit from the side,
    with the target rendered under a different light."""
    def run():
        spec = parse_scene(scene)
        d = make_depth(spec)
        albedo = ImagePlane.constant(d.shape, 0.65)
        lit = light or LightingParams(LightDirection.from_angles(0.0, 35.0), 0.5, 0.5)
        target_light = LightingParams(LightDirection.from_angles(60.0, 50.0), 0.4, 0.6)
        target = relight(d, albedo, target_light, cfg).image.values
        rep = finite_difference_check(d, albedo, lit, target, cfg, depth_pixels=depth_pixels, seed=seed)
        worst = {p: rep.max_rel_error(p) for p in ("depth", "ambient", "directional", "omega")}
        detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
        return rep.passed, f"max rel err {detail}; {len(rep.excluded_pixels)} unstable pixels excluded"
    return _timed("gradients", run)


def run_all(scene: str | None = None) -> list[GateResult]:
    """Gates 1-5. With ``scene`` the oracle and gradient gates also cover it."""
    scenes = None
    if scene is not None:
        scenes = [f"step:128,h={h:g}" for h in STEP_HEIGHTS] + ["gaussian_bump:128", "flat:128", scene]
    out = [visibility_gate(), shading_identity_gate(), oracle_gate(scenes), shadow_length_gate(),
           gradient_gate()]
    if scene is not None and parse_scene(scene).kind != "flat":
        extra = gradient_gate(scene)
        extra.name = f"gradients on {scene}"
        out.append(extra)
    return out
