import struct

import numpy as np
import pytest
from PIL import Image

from castshadow.fileio import (FormatError, read_depth, read_image, read_pfm, srgb_decode, srgb_encode, to_8bit,
                               write_depth, write_pfm, write_png)
from castshadow.geometry import DepthMap


def test_roundtrip_is_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    for shape in ((9, 17), (9, 17, 3)):
        a = (rng.normal(size=shape) * 1e3).astype(np.float32)
        a.flat[0] = np.float32(1e-40)  # subnormal survives
        p = tmp_path / "a.pfm"
        write_pfm(p, a)
        b = read_pfm(p)
        assert b.dtype == np.float32 and b.shape == shape
        assert b.tobytes() == a.tobytes()


def test_header_and_row_order(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "o.pfm"
    write_pfm(p, a)
    raw = p.read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    # first stored row is the bottom one
    assert struct.unpack("<3f", raw[12:24]) == (3.0, 4.0, 5.0)


def test_big_endian_payload(tmp_path):
    a = np.array([[1.5, -2.0], [0.25, 8.0]], dtype=np.float32)
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n2 2\n1.0\n" + a[::-1].astype(">f4").tobytes())
    assert np.array_equal(read_pfm(p), a)


@pytest.mark.parametrize("payload,match", [
    (b"P6\n2 2\n255\n" + bytes(12), "malformed PFM header"),
    (b"Pf\n2 2\nabc\n" + bytes(16), "malformed PFM scale"),
    (b"Pf\n2 2\n0\n" + bytes(16), "nonzero"),
    (b"Pf\n2 2\n-1.0\n" + bytes(12), "truncated"),
    (b"PF\n2 2\n-1.0\n" + bytes(16), "truncated"),
])
def test_bad_files(tmp_path, payload, match):
    p = tmp_path / "bad.pfm"
    p.write_bytes(payload)
    with pytest.raises(FormatError, match=match):
        read_pfm(p)


def test_non_finite_values(tmp_path):
    p = tmp_path / "nan.pfm"
    p.write_bytes(b"Pf\n2 1\n-1.0\n" + np.array([1.0, np.nan], "<f4").tobytes())
    with pytest.raises(FormatError, match="non-finite"):
        read_pfm(p)
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.array([[np.inf, 0.0]]))


def test_depth_needs_one_channel(tmp_path):
    p = tmp_path / "rgb.pfm"
    write_pfm(p, np.zeros((4, 4, 3)))
    with pytest.raises(FormatError, match="expected 1-channel"):
        read_depth(p)


def test_depth_roundtrip(tmp_path):
    d = DepthMap.full(np.linspace(0, 1, 64).reshape(8, 8).astype(np.float32).astype(np.float64), 0.5)
    p = tmp_path / "d.pfm"
    write_depth(p, d)
    back = read_depth(p, 0.5)
    assert np.array_equal(back.values, d.values) and back.pixel_spacing == 0.5


def test_srgb_codes():
    assert list(to_8bit(np.array([0.0, 1.0, 0.5, 2.0, -1.0]))) == [0, 255, 188, 255, 0]
    assert list(to_8bit(np.array([0.25, 1.0]), gamma=None)) == [64, 255]
    assert list(to_8bit(np.array([0.25]), gamma=2.0)) == [128]
    x = np.linspace(0, 1, 1001)
    assert np.allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)


def test_png_modes(tmp_path):
    write_png(tmp_path / "g.png", np.full((3, 5, 1), 0.5))
    write_png(tmp_path / "c.png", np.zeros((3, 5, 3)))
    with Image.open(tmp_path / "g.png") as im:
        assert im.mode == "L" and im.size == (5, 3)
    with Image.open(tmp_path / "c.png") as im:
        assert im.mode == "RGB"
    back = read_image(tmp_path / "g.png", channels=1)
    assert back.values.shape == (3, 5, 1)
    assert np.allclose(back.values, 0.5, atol=3e-3)


def test_unreadable_image(tmp_path):
    p = tmp_path / "x.png"
    p.write_bytes(b"not a png")
    with pytest.raises(FormatError):
        read_image(p)
