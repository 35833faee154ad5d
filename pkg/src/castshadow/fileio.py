"""Portable float maps and 8-bit PNG output."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import DepthMap
from .shading import ImagePlane


class FormatError(ValueError):
    pass


_HEADER = re.compile(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path) -> np.ndarray:
    """Float array of shape (H, W) for ``Pf`` or (H, W, 3) for ``PF``, top row first."""
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: malformed PFM header")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    try:
        scale = float(scale)
    except ValueError:
        raise FormatError(f"{path}: malformed PFM scale {scale!r}") from None
    if w < 1 or h < 1:
        raise FormatError(f"{path}: PFM dimensions must be positive, got {w}x{h}")
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"{path}: PFM scale must be finite and nonzero")
    c = 3 if kind == b"PF" else 1
    n = w * h * c
    payload = data[m.end():]
    if len(payload) < 4 * n:
        raise FormatError(f"{path}: truncated PFM payload ({len(payload)} of {4 * n} bytes)")
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    arr = np.frombuffer(payload, dtype=dtype, count=n).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: PFM contains non-finite values")
    arr = arr.reshape((h, w, c) if c == 3 else (h, w))
    return np.ascontiguousarray(arr[::-1])


def write_pfm(path, arr) -> None:
    """Little-endian float32 PFM; (H, W) writes ``Pf``, (H, W, 3) writes ``PF``."""
    a = np.asarray(arr)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if not (a.ndim == 2 or (a.ndim == 3 and a.shape[2] == 3)):
        raise ValueError(f"PFM holds HxW or HxWx3 arrays, got {a.shape}")
    a = a.astype("<f4")
    if not np.all(np.isfinite(a)):
        raise ValueError("PFM cannot store non-finite values")
    kind = "PF" if a.ndim == 3 else "Pf"
    header = f"{kind}\n{a.shape[1]} {a.shape[0]}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(a[::-1]).tobytes())


def read_depth(path, pixel_spacing: float = 1.0, valid=None) -> DepthMap:
    arr = read_pfm(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected 1-channel PFM for depth")
    valid = np.ones(arr.shape, dtype=bool) if valid is None else valid
    return DepthMap(arr.astype(np.float64), valid, pixel_spacing)


def write_depth(path, d: DepthMap) -> None:
    write_pfm(path, np.where(d.valid, d.values, 0.0))


def srgb_encode(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_decode(y: np.ndarray) -> np.ndarray:
    y = np.clip(y, 0.0, 1.0)
    return np.where(y <= 0.04045, y / 12.92, np.power((y + 0.055) / 1.055, 2.4))


def to_8bit(img, gamma="srgb") -> np.ndarray:
    """Encode linear values (``gamma`` = "srgb", a power exponent, or None) to uint8."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if gamma == "srgb":
        x = srgb_encode(x)
    elif gamma is not None:
        x = np.power(x, 1.0 / float(gamma))
    return np.rint(x * 255.0).astype(np.uint8)


def write_png(path, img, gamma="srgb") -> None:
    q = to_8bit(img, gamma)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[..., 0]
    if q.ndim not in (2, 3) or (q.ndim == 3 and q.shape[2] != 3):
        raise ValueError(f"PNG output needs HxW or HxWx3 data, got {q.shape}")
    Image.fromarray(q, "L" if q.ndim == 2 else "RGB").save(path, format="PNG")


def read_image(path, channels: int | None = None) -> ImagePlane:
    """Linear-light image from PFM (as stored) or 8-bit PNG (sRGB decoded)."""
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        arr = read_pfm(p).astype(np.float64)
    else:
        try:
            with Image.open(p) as im:
                im = im.convert("RGB" if channels != 1 else "L")
                arr = srgb_decode(np.asarray(im, dtype=np.float64) / 255.0)
        except OSError as e:
            raise FormatError(f"{path}: cannot read image ({e})") from None
    if arr.ndim == 2:
        arr = arr[..., None]
    if channels == 3 and arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if np.any(arr < 0):
        raise FormatError(f"{path}: image values must be nonnegative")
    return ImagePlane(arr, np.ones(arr.shape[:2], dtype=bool))
