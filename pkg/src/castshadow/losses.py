"""Supervision losses and their weighted total.

Every loss accepts plain ndarrays or tape ``Var`` objects for the predicted
argument, so the same code evaluates a number or records a differentiable
graph.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tape as T

LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LossWeights:
    depth: float = 1.0      # lambda_1
    albedo: float = 5.0     # lambda_2
    ambient: float = 2.5    # lambda_3
    light: float = 1.0      # lambda_4
    recon: float = 20.0     # lambda_5
    dssim: float = 8.0      # lambda_7; the adversarial lambda_6 term has no slot

    def __post_init__(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"loss weight {f.name!r} must be >= 0")


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel_1d(self) -> np.ndarray:
        r = np.arange(self.window) - (self.window - 1) / 2.0
        g = np.exp(-(r * r) / (2.0 * self.sigma ** 2))
        return g / g.sum()


def _mask_weights(mask, shape) -> np.ndarray:
    m = np.ones(shape, dtype=np.float64) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != tuple(shape):
        raise ValueError(f"mask shape {m.shape} does not match {tuple(shape)}")
    if not m.sum() > 0:
        raise ValueError("no supervised pixels")
    return m


def _same_shape(a, b) -> None:
    if np.shape(T.value(a)) != np.shape(T.value(b)):
        raise ValueError(f"shape mismatch: {np.shape(T.value(a))} vs {np.shape(T.value(b))}")


def depth_loss(pred, target, mask=None):
    _same_shape(pred, target)
    m = _mask_weights(mask, np.shape(T.value(pred)))
    return (T.absolute(pred - target) * m).sum() / m.sum()


def grayscale(img):
    return img[..., 0] * LUMA[0] + img[..., 1] * LUMA[1] + img[..., 2] * LUMA[2]


def albedo_loss(pred, target, mask=None):
    _same_shape(pred, target)
    if np.shape(T.value(pred))[-1] != 3:
        raise ValueError("albedo loss expects RGB inputs")
    m = _mask_weights(mask, np.shape(T.value(pred))[:2])
    return (T.absolute(grayscale(pred) - grayscale(target)) * m).sum() / m.sum()


def ambient_loss(pred, target):
    return T.absolute(pred - target)


def light_loss(pred, target):
    for name, w in (("predicted", pred), ("target", target)):
        n = float(np.linalg.norm(T.value(w)))
        if abs(n - 1.0) > 1e-4:
            raise ValueError(f"{name} light direction is not unit length (|w| = {n:.6g})")
    return 1.0 - (pred[0] * target[0] + pred[1] * target[1] + pred[2] * target[2])


def recon_loss(pred, target, mask=None):
    """Masked squared error, averaged over supervised pixels and channels."""
    _same_shape(pred, target)
    shape = np.shape(T.value(pred))
    m = _mask_weights(mask, shape[:2])
    r = pred - target
    return (r * r * m[..., None]).sum() / (m.sum() * shape[2])


# -- SSIM ---------------------------------------------------------------------

def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation without padding over the first two axes."""
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0)
    tmp = np.tensordot(rows, g, axes=([-1], [0]))
    cols = np.lib.stride_tricks.sliding_window_view(tmp, k, axis=1)
    return np.tensordot(cols, g, axes=([-1], [0]))


def _filter_adjoint(g_out: np.ndarray, g: np.ndarray) -> np.ndarray:
    pad = g.size - 1
    widths = [(pad, pad), (pad, pad)] + [(0, 0)] * (g_out.ndim - 2)
    return _filter_valid(np.pad(g_out, widths), g[::-1])


def _ssim_terms(x: np.ndarray, y: np.ndarray, p: SsimParams):
    g = p.kernel_1d()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    pxx, pyy, pxy = _filter_valid(x * x, g), _filter_valid(y * y, g), _filter_valid(x * y, g)
    a1 = 2.0 * mx * my + p.c1
    a2 = 2.0 * (pxy - mx * my) + p.c2
    b1 = mx * mx + my * my + p.c1
    b2 = (pxx - mx * mx) + (pyy - my * my) + p.c2
    return g, mx, my, a1, a2, b1, b2


def _as_hwc(a: np.ndarray) -> np.ndarray:
    return a[..., None] if a.ndim == 2 else a


def ssim(pred, target, params: SsimParams | None = None):
    """Mean SSIM over valid window centres, averaged over channels.

    Only ``pred`` may be a tape variable; ``target`` is a constant.
    """
    p = params or SsimParams()
    if isinstance(target, T.Var):
        raise TypeError("ssim target must be a constant array")
    _same_shape(pred, target)
    y = _as_hwc(np.asarray(target, dtype=np.float64))
    if y.shape[0] < p.window or y.shape[1] < p.window:
        raise ValueError(f"image {y.shape[:2]} is smaller than the {p.window}x{p.window} SSIM window")
    squeeze = np.ndim(T.value(pred)) == 2

    def f(xv):
        _, _, _, a1, a2, b1, b2 = _ssim_terms(_as_hwc(xv), y, p)
        return np.mean(a1 * a2 / (b1 * b2))

    if not isinstance(pred, T.Var):
        return f(np.asarray(pred, dtype=np.float64))
    xv = _as_hwc(pred.value)

    def vjp(gout):
        g, mx, my, a1, a2, b1, b2 = _ssim_terms(xv, y, p)
        s = a1 * a2 / (b1 * b2)
        scale = gout / s.size
        d_mx = (2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2)
        d_pxx = -s / b2
        d_pxy = 2.0 * a1 / (b1 * b2)
        gx = (_filter_adjoint(scale * d_mx, g) + 2.0 * xv * _filter_adjoint(scale * d_pxx, g)
              + y * _filter_adjoint(scale * d_pxy, g))
        return (gx[..., 0] if squeeze else gx,)

    return pred.tape.record("ssim", [pred], f(pred.value), f, vjp)


def dssim_loss(pred, target, params: SsimParams | None = None):
    pred = T.clip01(pred)
    target = np.clip(np.asarray(target, dtype=np.float64), 0.0, 1.0)
    return (1.0 - ssim(pred, target, params)) * 0.5


@dataclass
class LossComponents:
    depth: object = 0.0
    albedo: object = 0.0
    ambient: object = 0.0
    light: object = 0.0
    recon: object = 0.0
    dssim: object = 0.0


def total_loss(components: LossComponents | dict, weights: LossWeights | None = None):
    w = weights or LossWeights()
    c = components if isinstance(components, LossComponents) else LossComponents(**components)
    total = 0.0
    for name in ("depth", "albedo", "ambient", "light", "recon", "dssim"):
        term = getattr(c, name)
        wt = getattr(w, name)
        if wt == 0 or (not isinstance(term, T.Var) and term == 0):
            continue
        total = total + wt * term
    return total
