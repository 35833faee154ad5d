import numpy as np
import pytest

from castshadow.scenes import DOMAIN_WIDTH, coordinates, height_field, make_depth, parse_scene


def test_parse():
    s = parse_scene("step:64x32,h=2")
    assert (s.kind, s.width, s.height, s.param("h")) == ("step", 64, 32, 2.0)
    assert s.spacing == DOMAIN_WIDTH / 64
    assert parse_scene("flat:16,spacing=0.5").spacing == 0.5
    assert parse_scene("gaussian_bump:20").param("sigma") == 1.0


@pytest.mark.parametrize("text", ["flat", "flat:4", "cube:32", "step:32,h=-1", "step:32,amp=1",
                                  "gaussian_bump:32,sigma=x", "flat:16,spacing=0"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        parse_scene(text)


def test_step_edge_and_height():
    spec = parse_scene("step:32,h=1.5")
    hf = height_field(spec)
    u, _ = coordinates(spec)
    assert np.all(hf[u >= 0] == 1.5) and np.all(hf[u < 0] == 0.0)
    assert np.all(hf[:, 16] == 1.5) and np.all(hf[:, 15] == 0.0)


def test_depth_is_zero_at_peak():
    for text in ("gaussian_bump:33", "step:16", "nose_ridge:48", "flat:8"):
        d = make_depth(parse_scene(text))
        assert d.values[d.valid].min() == 0.0


def test_bump_peak_at_centre():
    d = make_depth(parse_scene("gaussian_bump:33,amp=2"))
    assert d.values[16, 16] == 0.0
    assert d.values.max() == pytest.approx(2.0 * (1 - np.exp(-(16 * 4 / 33) ** 2 * 2)), rel=1e-12)


def test_nose_ridge_mask():
    d = make_depth(parse_scene("nose_ridge:64"))
    assert d.valid[32, 32] and not d.valid[0, 0]
