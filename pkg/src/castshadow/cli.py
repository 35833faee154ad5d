"""Command-line interface: ``castshadow {relight,mask,normals,sweep,fit,check}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checks
from .fileio import FormatError, read_depth, read_image, write_pfm, write_png
from .geometry import DepthMap, compute_normals, depth_to_points
from .losses import LossWeights
from .optimizer import FREE_PARAMS, FitProblem, fit
from .pipeline import relight
from .scenes import make_depth, parse_scene
from .shading import ImagePlane, LightingParams
from .shadow import LightDirection, ShadowConfig, estimate_shadow_mask

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DEFAULT_ALBEDO = 0.65


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}")
    return vals


# -- config ---------------------------------------------------------------------

_CONFIG_KEYS = {
    "light": list, "light_vec": list, "ambient": float, "directional": float,
    "samples": int, "start_offset": float, "distance_scale": float, "oob_policy": str,
    "albedo": (float, str), "weights": dict, "iters": int, "lr": float, "free": (list, str),
}


def load_config(path) -> dict:
    """Read a JSON run config; every malformed field is reported by name."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path}: line {e.lineno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path}: top level must be an object")
    for key, val in raw.items():
        if key not in _CONFIG_KEYS:
            raise UsageError(f"config field {key!r}: unknown field")
        want = _CONFIG_KEYS[key]
        types = want if isinstance(want, tuple) else (want,)
        ok = any(isinstance(val, t) and not (t in (int, float) and isinstance(val, bool)) for t in types)
        if float in types and isinstance(val, int) and not isinstance(val, bool):
            ok = True
        if not ok:
            names = " or ".join(t.__name__ for t in types)
            raise UsageError(f"config field {key!r}: expected {names}, got {type(val).__name__}")
    if "weights" in raw:
        known = {f.name for f in fields(LossWeights)}
        for k, v in raw["weights"].items():
            if k not in known:
                raise UsageError(f"config field 'weights.{k}': unknown loss weight")
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise UsageError(f"config field 'weights.{k}': expected number")
    return raw


def _merged(args, cfg: dict, name: str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


# -- inputs -----------------------------------------------------------------------

def _depth(args) -> DepthMap:
    if args.depth and args.scene:
        raise UsageError("--depth and --scene are mutually exclusive")
    if args.scene:
        try:
            return make_depth(parse_scene(args.scene))
        except ValueError as e:
            raise UsageError(f"--scene: {e}") from None
    if args.depth:
        return read_depth(args.depth, args.pixel_spacing)
    raise UsageError("one of --depth or --scene is required")


def _shadow_config(args, cfg: dict) -> ShadowConfig:
    try:
        return ShadowConfig(samples=_merged(args, cfg, "samples", 160),
                            start_offset=_merged(args, cfg, "start_offset"),
                            distance_scale=_merged(args, cfg, "distance_scale"),
                            oob_policy=cfg.get("oob_policy", "terminate"))
    except ValueError as e:
        raise UsageError(str(e)) from None


def _light(args, cfg: dict) -> LightingParams:
    if args.light and args.light_vec:
        raise UsageError("--light and --light-vec are mutually exclusive")
    try:
        if args.light_vec or (not args.light and "light_vec" in cfg):
            v = _floats(args.light_vec, 3, "--light-vec") if args.light_vec else cfg["light_vec"]
            omega = LightDirection.from_vector(v)
        else:
            az, el = _floats(args.light, 2, "--light") if args.light else cfg.get("light", [0.0, 90.0])
            if not 0.0 < el <= 90.0:
                raise UsageError(f"--light: elevation must lie in (0, 90] degrees, got {el:g}")
            omega = LightDirection.from_angles(az, el)
        omega.require_front()
        return LightingParams(omega, _merged(args, cfg, "ambient", 0.5),
                              _merged(args, cfg, "directional", 0.5))
    except ValueError as e:
        raise UsageError(f"light: {e}") from None


def _albedo(args, cfg: dict, d: DepthMap) -> ImagePlane:
    src = args.albedo if args.albedo is not None else cfg.get("albedo", DEFAULT_ALBEDO)
    try:
        gray = float(src)
    except (TypeError, ValueError):
        img = read_image(src, channels=3)
        if img.shape != d.shape:
            raise FormatError(f"albedo {img.shape} and depth {d.shape} dimensions differ") from None
        return img
    if gray < 0:
        raise UsageError(f"--albedo must be >= 0, got {gray}")
    return ImagePlane.constant(d.shape, gray)


def _write_image(path: Path, values: np.ndarray, gamma="srgb") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, values)
    else:
        write_png(path, values, gamma)


# -- subcommands ------------------------------------------------------------------

def cmd_relight(args, cfg) -> int:
    d = _depth(args)
    out = relight(d, _albedo(args, cfg, d), _light(args, cfg), _shadow_config(args, cfg), workers=args.workers)
    _write_image(Path(args.out), out.image.values)
    return EXIT_OK


def cmd_mask(args, cfg) -> int:
    d = _depth(args)
    m = estimate_shadow_mask(d, _light(args, cfg).omega, _shadow_config(args, cfg), workers=args.workers)
    _write_image(Path(args.out), m.values, gamma=None)
    return EXIT_OK


def cmd_normals(args, cfg) -> int:
    n = compute_normals(depth_to_points(_depth(args)))
    path = Path(args.out)
    vals = n.normals if path.suffix.lower() == ".pfm" else (n.normals + 1.0) * 0.5
    _write_image(path, np.where(n.valid[..., None], vals, 0.0), gamma=None)
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    d = _depth(args)
    base = _light(args, cfg)
    albedo = _albedo(args, cfg, d)
    scfg = _shadow_config(args, cfg)
    if args.frames < 1:
        raise UsageError(f"--frames must be >= 1, got {args.frames}")
    a0, a1 = _floats(args.az_range, 2, "--az-range")
    if args.elevation is not None:
        el = args.elevation
    elif args.light:
        el = _floats(args.light, 2, "--light")[1]
    else:
        el = base.omega.elevation_deg
    if not 0.0 < el <= 90.0:
        raise UsageError(f"elevation must lie in (0, 90] degrees, got {el:g}")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(args.frames - 1)))
    step = (a1 - a0) / (args.frames - 1) if args.frames > 1 else 0.0
    manifest = []
    for k in range(args.frames):
        az = a0 + k * step
        omega = LightDirection.from_angles(az, el)
        light = LightingParams(omega, base.ambient, base.directional)
        name = f"frame_{k:0{width}d}.png"
        write_png(outdir / name, relight(d, albedo, light, scfg, workers=args.workers).image.values)
        manifest.append({"frame": k, "file": name, "azimuth_deg": az, "elevation_deg": el,
                         "light_vec": [float(c) for c in omega.vec]})
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return EXIT_OK


def cmd_fit(args, cfg) -> int:
    free = _merged(args, cfg, "free", "omega")
    free = tuple(p.strip() for p in (free.split(",") if isinstance(free, str) else free) if p.strip())
    for p in free:
        if p not in FREE_PARAMS:
            raise UsageError(f"--free: unknown parameter {p!r}; choose from {', '.join(FREE_PARAMS)}")
    d = _depth(args)
    target = read_image(args.target)
    if target.shape != d.shape:
        raise FormatError(f"target {target.shape} and depth {d.shape} dimensions differ")
    albedo = _albedo(args, cfg, d)
    if target.channels == 1:
        albedo = ImagePlane(albedo.values[..., :1], albedo.valid)
    try:
        weights = LossWeights(**cfg.get("weights", {}))
        problem = FitProblem(target.values, d, albedo, _light(args, cfg), free=free, weights=weights,
                             cfg=_shadow_config(args, cfg), iterations=_merged(args, cfg, "iters", 2000),
                             lr=_merged(args, cfg, "lr", 1e-4))
    except ValueError as e:
        raise UsageError(str(e)) from None
    res = fit(problem)
    w = res.lighting.omega
    report = {"omega": [float(c) for c in w.vec], "azimuth_deg": w.azimuth_deg,
              "elevation_deg": w.elevation_deg, "ambient": res.lighting.ambient,
              "directional": res.lighting.directional, "iterations": res.iterations,
              "loss": res.losses}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2) + "\n")
    if "depth" in free:
        write_pfm(out.with_suffix(".depth.pfm"), np.where(res.depth.valid, res.depth.values, 0.0))
    return EXIT_OK


def cmd_check(args, cfg) -> int:
    if args.scene:
        try:
            parse_scene(args.scene)
        except ValueError as e:
            raise UsageError(f"--scene: {e}") from None
    results = checks.run_all(args.scene)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# -- parser -----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    src = p.add_argument_group("input")
    src.add_argument("--depth", metavar="PATH", help="1-channel PFM depth map")
    src.add_argument("--scene", metavar="SPEC", help="synthetic scene, e.g. gaussian_bump:64 or step:128,h=1")
    src.add_argument("--pixel-spacing", type=float, default=1.0, help="world units per pixel for --depth")
    src.add_argument("--albedo", metavar="PATH|GRAY", help=f"albedo image or constant gray (default {DEFAULT_ALBEDO})")
    lt = p.add_argument_group("lighting")
    lt.add_argument("--light", metavar="AZ,EL", help="azimuth and elevation in degrees")
    lt.add_argument("--light-vec", metavar="X,Y,Z", help="direction toward the light")
    lt.add_argument("--ambient", type=float)
    lt.add_argument("--directional", type=float)
    sh = p.add_argument_group("shadow sampling")
    sh.add_argument("--samples", type=int)
    sh.add_argument("--start-offset", type=float)
    sh.add_argument("--distance-scale", type=float)
    p.add_argument("--workers", type=int, default=None, help="threads for the shadow mask")
    p.add_argument("--config", metavar="JSON", help="run config; command-line flags take precedence")
    p.add_argument("--out", required=out_required, metavar="PATH")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="castshadow", description="Relight height fields with differentiable cast shadows.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("relight", "render under a new light"), ("mask", "write the soft shadow mask"),
                        ("normals", "write surface normals")):
        _common(sub.add_parser(name, help=help_))
    sw = sub.add_parser("sweep", help="render a rotating-light sequence")
    _common(sw)
    sw.add_argument("--frames", type=int, default=36)
    sw.add_argument("--az-range", default="0,360", metavar="A0,A1", help="first and last azimuth in degrees")
    sw.add_argument("--elevation", type=float, help="overrides the elevation of --light")
    ft = sub.add_parser("fit", help="fit lighting (and optionally depth) to a target image")
    _common(ft)
    ft.add_argument("--target", required=True, metavar="PATH")
    ft.add_argument("--free", help=f"comma list from {','.join(FREE_PARAMS)} (default omega)")
    ft.add_argument("--iters", type=int)
    ft.add_argument("--lr", type=float)
    ck = sub.add_parser("check", help="run the built-in correctness gates")
    ck.add_argument("--scene", metavar="SPEC", help="extra scene for the oracle and gradient gates")
    return ap


_COMMANDS = {"relight": cmd_relight, "mask": cmd_mask, "normals": cmd_normals,
             "sweep": cmd_sweep, "fit": cmd_fit, "check": cmd_check}


_LIST_FLAGS = ("--light", "--light-vec", "--az-range")


def _join_negative_lists(argv: list[str]) -> list[str]:
    # argparse reads "-35,30" as an option; attach such values to their flag
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _LIST_FLAGS:
            nxt = next(it, None)
            if nxt is not None and re.fullmatch(r"-[\d.][\d.,eE+-]*", nxt):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_negative_lists(argv))
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else {}
        return _COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"castshadow: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError, ValueError, FloatingPointError) as e:
        print(f"castshadow: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
