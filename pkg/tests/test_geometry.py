import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from castshadow.geometry import DepthMap, compute_normals, depth_to_points
from castshadow.scenes import make_depth, parse_scene


def test_constant_plane_points():
    p = depth_to_points(DepthMap.full(np.ones((2, 2))))
    assert np.all(p.points[..., 2] == -1.0)
    assert sorted(set(p.points[..., 0].ravel())) == [0.0, 1.0]
    assert sorted(set(p.points[..., 1].ravel())) == [0.0, 1.0]


def test_pixel_formula():
    d = np.ones((2, 3))
    d[0, 0] = 0.0
    p = depth_to_points(DepthMap.full(d, 0.5))
    assert tuple(p.points[0, 0]) == (0.0, 0.5, 0.0)
    # row 0 is the top of the frame
    assert p.points[0, 0, 1] > p.points[1, 0, 1]


def test_bump_apex_at_origin_height():
    n = 33
    ii, jj = np.mgrid[0:n, 0:n]
    r2 = ((ii - n // 2) ** 2 + (jj - n // 2) ** 2) / 64.0
    p = depth_to_points(DepthMap.full(1.0 - np.exp(-r2)))
    assert p.points[n // 2, n // 2, 2] == 0.0
    assert p.points[..., 2].max() == 0.0


def test_points_invert_to_depth():
    rng = np.random.default_rng(3)
    d = DepthMap.full(rng.normal(size=(7, 5)), 0.3)
    assert np.array_equal(-depth_to_points(d).points[..., 2], d.values)


def test_flat_normals():
    n = compute_normals(depth_to_points(DepthMap.full(np.full((6, 6), 2.0))))
    assert np.array_equal(n.normals, np.broadcast_to([0.0, 0.0, 1.0], (6, 6, 3)))
    assert not n.degenerate.any()


def test_tilted_plane_normal():
    # depth = -x tan 30 so height rises with x
    ii, jj = np.mgrid[0:8, 0:8]
    d = DepthMap.full(-jj * math.tan(math.radians(30)))
    n = compute_normals(depth_to_points(d))
    want = np.array([-math.sin(math.radians(30)), 0.0, math.cos(math.radians(30))])
    assert np.allclose(n.normals, want, atol=1e-12)


def test_single_valid_pixel_is_degenerate():
    valid = np.zeros((4, 4), dtype=bool)
    valid[1, 2] = True
    n = compute_normals(depth_to_points(DepthMap(np.zeros((4, 4)), valid)))
    assert n.degenerate[1, 2]
    assert tuple(n.normals[1, 2]) == (0.0, 0.0, 1.0)


def test_one_sided_differences_at_mask_border():
    # a linear ramp is reproduced exactly by either difference scheme
    ii, jj = np.mgrid[0:9, 0:9]
    valid = (ii - 4) ** 2 + (jj - 4) ** 2 <= 12
    d = DepthMap(0.3 * jj - 0.2 * ii, valid)
    n = compute_normals(depth_to_points(d))
    # z = -0.3 x - 0.2 y because y grows upward while i grows downward
    t = np.array([0.3, 0.2, 1.0])
    t /= np.linalg.norm(t)
    assert np.allclose(n.normals[valid], t, atol=1e-12)
    assert np.all(n.normals[~valid] == 0.0)


def test_bump_normal_error_is_second_order():
    errs = []
    for res in (32, 64):
        spec = parse_scene(f"gaussian_bump:{res}")
        d = make_depth(spec)
        s = spec.spacing
        n = compute_normals(depth_to_points(d))
        ii, jj = np.mgrid[0:res, 0:res]
        u, v = (jj - res // 2) * s, (res // 2 - ii) * s
        hgt = np.exp(-(u * u + v * v))
        gx, gy = -2 * u * hgt, -2 * v * hgt
        exact = np.stack([-gx, -gy, np.ones_like(gx)], -1)
        exact /= np.linalg.norm(exact, axis=-1, keepdims=True)
        inner = np.s_[1:-1, 1:-1]
        errs.append(np.abs(n.normals[inner] - exact[inner]).max())
    assert errs[1] < errs[0] / 3.0


def test_depthmap_validation():
    with pytest.raises(ValueError):
        DepthMap(np.zeros((1, 5)), True)
    with pytest.raises(ValueError):
        DepthMap(np.zeros((3, 3)), True, 0.0)
    bad = np.zeros((3, 3))
    bad[1, 1] = np.nan
    with pytest.raises(ValueError):
        DepthMap(bad, True)
    valid = np.ones((3, 3), dtype=bool)
    valid[1, 1] = False
    DepthMap(bad, valid)  # non-finite allowed off the mask


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.floats(-3, 3)),
       st.floats(0.05, 2.0))
def test_normals_unit_and_camera_facing(values, spacing):
    n = compute_normals(depth_to_points(DepthMap.full(values, spacing)))
    lengths = np.linalg.norm(n.normals, axis=-1)
    assert np.all(np.abs(lengths - 1.0) <= 1e-6)
    assert np.all(n.normals[..., 2] >= 0.0)
