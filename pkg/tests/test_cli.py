import json

import numpy as np
import pytest

from flowdistill.cli import run
from flowdistill.core import read_pfm, write_pfm
from flowdistill.scene import SCENE_FILES


@pytest.fixture
def scene_dir(tmp_path):
    cfg = tmp_path / "scene.cfg"
    cfg.write_text(
        "height=16\nwidth=48\ndepth_model=layered_boxes\nbackground_depth=120\n"
        "boxes=2:14:20:40:6.0\ntexture=bandlimited_noise\ntexture_seed=2\nflow_noise_sigma=0.05\n"
    )
    out = tmp_path / "s7"
    assert run(["gen-scene", "--config", str(cfg), "--seed", "7", "--out", str(out)]) == 0
    return out


def test_gen_scene_writes_files_and_manifest(scene_dir):
    for name in SCENE_FILES + ("target.pgm", "source.pgm", "scene.cfg", "manifest.json"):
        assert (scene_dir / name).is_file()
    manifest = json.loads((scene_dir / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["command"] == "gen-scene"
    assert set(SCENE_FILES) <= set(manifest["artifacts"])


def test_gen_scene_stress(tmp_path):
    assert run(["gen-scene", "--stress", "--out", str(tmp_path / "st")]) == 0
    manifest = json.loads((tmp_path / "st" / "manifest.json").read_text())
    assert manifest["config"]["designated_pixel"] == "32,120"


def test_landscape(scene_dir, tmp_path):
    out = tmp_path / "curve.csv"
    assert run(["landscape", "--scene", str(scene_dir), "--pixel", "8,30", "--range", "1:20:0.5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "depth,L_p,L_dr,L_fp,L_fd" and len(lines) == 40
    assert (tmp_path / "curve.csv.manifest.json").is_file()


def test_optimize_and_eval(scene_dir, tmp_path):
    out = tmp_path / "opt"
    assert run(["optimize", "--scene", str(scene_dir), "--loss", "Lfd+Mf", "--steps", "20", "--out", str(out)]) == 0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "step,loss" and len(trace) == 22
    assert (out / "eval.csv").read_text().startswith("metric,value\nabs_rel,")
    ev = tmp_path / "ev.csv"
    assert run(["eval", "--scene", str(scene_dir), "--depth", str(out / "depth.pfm"), "--out", str(ev)]) == 0
    # depth.pfm is float32, so the re-evaluation agrees to single precision
    got = dict(line.split(",") for line in ev.read_text().splitlines()[1:])
    want = dict(line.split(",") for line in (out / "eval.csv").read_text().splitlines()[1:])
    assert got.keys() == want.keys()
    for key in got:
        assert float(got[key]) == pytest.approx(float(want[key]), rel=1e-5, abs=1e-6)


def test_ablate_rows_and_labels(scene_dir, tmp_path):
    out = tmp_path / "ab.csv"
    code = run(["ablate", "--scene", str(scene_dir), "--losses", "Ldr,Lfp,Ldr+Lfp", "--steps", "5", "--out", str(out)])
    assert code == 0
    rows = out.read_text().splitlines()
    assert [r.split(",")[0] for r in rows] == ["loss", "Ldr", "Lfp", "Ldr+Lfp"]


def test_grad_check_and_warp(scene_dir, tmp_path):
    gc = tmp_path / "gc.csv"
    assert run(["grad-check", "--scene", str(scene_dir), "--loss", "Lp", "--trials", "20", "--out", str(gc)]) == 0
    assert float(gc.read_text().splitlines()[1].split(",")[1]) < 1e-4
    w = tmp_path / "w"
    assert run(["warp", "--scene", str(scene_dir), "--padding", "zeros", "--out", str(w)]) == 0
    warped = read_pfm(w / "warped.pfm")
    inb = read_pfm(w / "in_bounds.pfm")
    assert np.all(warped[inb == 0] == 0)


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["nope"],
        ["landscape", "--scene", "x", "--pixel", "1;2", "--out", "y"],
        ["landscape", "--scene", "x", "--pixel", "1,2", "--range", "1:2", "--out", "y"],
        ["gen-scene", "--stress", "--config", "c", "--out", "o"],
        ["ablate", "--scene", "x", "--out", "y", "--bogus"],
    ],
)
def test_usage_errors_exit_2(argv):
    assert run(argv) == 2


def test_validation_errors_exit_1_without_output(scene_dir, tmp_path):
    out = tmp_path / "bad.csv"
    assert run(["landscape", "--scene", str(scene_dir), "--pixel", "99,1", "--out", str(out)]) == 1
    assert run(["landscape", "--scene", str(scene_dir), "--pixel", "1,1", "--range", "5:1:1", "--out", str(out)]) == 1
    assert run(["ablate", "--scene", str(scene_dir), "--losses", "Lq", "--out", str(out)]) == 1
    assert run(["optimize", "--scene", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    write_pfm(tmp_path / "d.pfm", np.ones((3, 3)))
    assert run(["eval", "--scene", str(scene_dir), "--depth", str(tmp_path / "d.pfm"), "--out", str(out)]) == 1
    lc = tmp_path / "loss.cfg"
    lc.write_text("alpha=2\n")
    assert run(["optimize", "--scene", str(scene_dir), "--loss-config", str(lc), "--out", str(tmp_path / "o")]) == 1
    assert not out.exists() and not (tmp_path / "o").exists()


def test_loss_config_is_applied(scene_dir, tmp_path):
    lc = tmp_path / "loss.cfg"
    lc.write_text("alpha=0.5\npadding=zeros\ndelta=40\n")
    out = tmp_path / "c.csv"
    assert run(["landscape", "--scene", str(scene_dir), "--pixel", "8,30", "--range", "2:4:1",
                "--loss-config", str(lc), "--out", str(out)]) == 0
    cfg = json.loads((tmp_path / "c.csv.manifest.json").read_text())["config"]
    assert cfg["loss.alpha"] == 0.5 and cfg["loss.padding"] == "zeros" and cfg["loss.delta"] == 40.0
