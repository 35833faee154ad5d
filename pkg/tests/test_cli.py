import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from castshadow.cli import main
from castshadow.fileio import read_pfm, write_pfm


def png(path):
    with Image.open(path) as im:
        return np.asarray(im)


def test_relight_flat_overhead_is_uniform(tmp_path):
    out = tmp_path / "r.png"
    assert main(["relight", "--scene", "flat:16", "--light-vec", "0,0,1", "--out", str(out)]) == 0
    a = png(out)
    # 0.5 + 0.5 on albedo 0.65 gives 0.65 linear, code 211 after sRGB encoding
    assert a.shape == (16, 16, 3) and np.all(a == 211)


def test_repeated_runs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        p = tmp_path / f"m{k}.pfm"
        assert main(["mask", "--scene", "gaussian_bump:32", "--light", "20,35", "--out", str(p)]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    m = read_pfm(tmp_path / "m0.pfm")
    assert m.shape == (32, 32) and m.min() < 0.5 <= m.max() <= 1.0


def test_depth_file_input(tmp_path):
    depth = np.zeros((12, 12), np.float32)
    depth[:, 6:] = -3.0  # raised right half
    write_pfm(tmp_path / "d.pfm", depth)
    out = tmp_path / "m.pfm"
    assert main(["mask", "--depth", str(tmp_path / "d.pfm"), "--light", "0,45", "--out", str(out)]) == 0
    m = read_pfm(out)
    assert m[6, 3:5].max() < 0.5 and m[6, 6:].min() > 0.9


def test_normals_outputs(tmp_path):
    assert main(["normals", "--scene", "flat:8", "--out", str(tmp_path / "n.pfm")]) == 0
    n = read_pfm(tmp_path / "n.pfm")
    assert n.shape == (8, 8, 3) and np.all(n[..., 2] == 1.0)
    assert main(["normals", "--scene", "flat:8", "--out", str(tmp_path / "n.png")]) == 0
    assert np.all(png(tmp_path / "n.png")[..., 2] == 255)


def test_sweep_manifest(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--scene", "gaussian_bump:16", "--frames", "3", "--az-range", "0,90",
                 "--light", "0,40", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert [f["file"] for f in man] == ["frame_000.png", "frame_001.png", "frame_002.png"]
    assert [f["azimuth_deg"] for f in man] == [0.0, 45.0, 90.0]
    assert all(f["elevation_deg"] == 40.0 for f in man)
    assert all((out / f["file"]).exists() for f in man)
    assert not np.array_equal(png(out / "frame_000.png"), png(out / "frame_002.png"))


def test_fit_writes_report(tmp_path):
    tgt = tmp_path / "t.pfm"
    assert main(["relight", "--scene", "gaussian_bump:16", "--light", "30,45", "--ambient", "0.5",
                 "--out", str(tgt)]) == 0
    rep = tmp_path / "fit.json"
    assert main(["fit", "--scene", "gaussian_bump:16", "--target", str(tgt), "--light", "30,45",
                 "--ambient", "0.3", "--free", "ambient,depth", "--iters", "5", "--lr", "0.01",
                 "--out", str(rep)]) == 0
    r = json.loads(rep.read_text())
    assert r["iterations"] == 5 and len(r["loss"]) == 5
    assert r["ambient"] == pytest.approx(0.35, abs=1e-3)
    assert read_pfm(tmp_path / "fit.depth.pfm").shape == (16, 16)


@pytest.mark.parametrize("argv", [
    [],
    ["relight", "--scene", "flat:8"],                                     # no --out
    ["relight", "--scene", "flat:8", "--depth", "x.pfm", "--out", "o.png"],
    ["relight", "--scene", "flat:8", "--light", "0,-10", "--out", "o.png"],
    ["relight", "--scene", "flat:8", "--light", "0", "--out", "o.png"],
    ["relight", "--scene", "cube:8", "--out", "o.png"],
    ["relight", "--scene", "flat:8", "--samples", "0", "--out", "o.png"],
    ["fit", "--scene", "flat:8", "--target", "t.pfm", "--free", "albedo", "--out", "o.json"],
    ["check", "--scene", "nope"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    try:
        code = main(argv)
    except SystemExit as e:
        code = e.code
    assert code == 1


def test_data_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"Pf\n4 4\n-1.0\n")
    assert main(["mask", "--depth", str(bad), "--out", str(tmp_path / "m.pfm")]) == 2
    assert main(["mask", "--depth", str(tmp_path / "missing.pfm"), "--out", str(tmp_path / "m.pfm")]) == 2


def test_config_diagnostics(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"samples": "many"}))
    assert main(["mask", "--scene", "flat:8", "--config", str(cfg), "--out", str(tmp_path / "m.pfm")]) == 1
    assert "config field 'samples': expected int, got str" in capsys.readouterr().err
    cfg.write_text('{"samples": 10,\n "bogus": 1}')
    assert main(["mask", "--scene", "flat:8", "--config", str(cfg), "--out", str(tmp_path / "m.pfm")]) == 1
    assert "'bogus'" in capsys.readouterr().err
    cfg.write_text('{"samples": 10,\n oops}')
    assert main(["mask", "--scene", "flat:8", "--config", str(cfg), "--out", str(tmp_path / "m.pfm")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_config_values_apply_and_flags_win(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"light": [0, 45], "ambient": 1.0, "directional": 0.0}))
    out = tmp_path / "a.pfm"
    assert main(["relight", "--scene", "flat:8", "--config", str(cfg), "--albedo", "0.5", "--out", str(out)]) == 0
    assert np.all(read_pfm(out) == 0.5)
    assert main(["relight", "--scene", "flat:8", "--config", str(cfg), "--albedo", "0.5", "--ambient", "0.5",
                 "--out", str(out)]) == 0
    assert np.all(read_pfm(out) == 0.25)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "castshadow.cli", "relight", "--scene", "flat:8",
                        "--out", str(tmp_path / "x.png")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "castshadow.cli", "bogus"], capture_output=True, text=True)
    assert r.returncode == 1


def test_negative_angles_parse(tmp_path):
    a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
    assert main(["mask", "--scene", "gaussian_bump:16", "--light", "-35,30", "--out", str(a)]) == 0
    assert main(["mask", "--scene", "gaussian_bump:16", "--light=-35,30", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["mask", "--scene", "gaussian_bump:16", "--light-vec", "-1,-0.5,1", "--out", str(a)]) == 0
    assert main(["sweep", "--scene", "flat:8", "--frames", "2", "--az-range", "-90,90", "--light", "0,45",
                 "--out", str(tmp_path / "sw")]) == 0
