import json
import subprocess
import sys

import numpy as np
import pytest

from demea import shapes
from demea.cli import main
from demea.mesh import load_mesh, save_mesh


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Sphere dataset, its hierarchy and a zero-step (untrained) model."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    data.mkdir()
    sphere = shapes.icosphere(2)
    save_mesh(sphere, data / "template.obj")
    rng = np.random.default_rng(0)
    for i in range(4):
        v = sphere.vertices * (1 + 0.05 * rng.normal(size=(1, 3))) + 0.01 * rng.normal(size=3)
        save_mesh(sphere.with_vertices(v), data / f"pose_{i}.obj")
    assert main(["build-hierarchy", str(data / "template.obj"), "--graph-nodes", "42",
                 "--levels", "162,42,12", "--out", str(data / "hierarchy")]) == 0
    cfg = {"latent_dim": 4, "encoder_widths": [8, 8], "batch_size": 2, "spiral_length": 9}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(root / "cfg.json"), "--data", str(data),
                 "--out", str(root / "zero"), "--steps", "0"]) == 0
    assert main(["train", "--config", str(root / "cfg.json"), "--data", str(data),
                 "--out", str(root / "run"), "--steps", "6"]) == 0
    return root


def test_build_hierarchy_prints_counts(tmp_path, capsys):
    save_mesh(shapes.icosphere(2), tmp_path / "s.obj")
    assert main(["build-hierarchy", str(tmp_path / "s.obj"), "--graph-nodes", "42",
                 "--levels", "162,42,12", "--out", str(tmp_path / "h")]) == 0
    out = capsys.readouterr().out.split()
    assert "162" in out and "42" in out and "12" in out
    manifest = json.loads((tmp_path / "h" / "hierarchy.json").read_text())
    assert manifest["level_counts"] == [162, 42, 12]


def test_build_hierarchy_deterministic(tmp_path):
    save_mesh(shapes.icosphere(2), tmp_path / "s.obj")
    for name in ("a", "b"):
        assert main(["build-hierarchy", str(tmp_path / "s.obj"), "--graph-nodes", "42",
                     "--levels", "162,42,12", "--spectral", "--out", str(tmp_path / name)]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_build_hierarchy_infeasible(tmp_path, capsys):
    save_mesh(shapes.icosphere(2), tmp_path / "s.obj")
    assert main(["build-hierarchy", str(tmp_path / "s.obj"), "--graph-nodes", "42",
                 "--levels", "162,42,60", "--out", str(tmp_path / "h")]) == 2
    assert "error" in capsys.readouterr().err


def test_train_missing_data(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_train_outputs(workspace):
    run = workspace / "run"
    for name in ("config.json", "model.ckpt", "model.adam.ckpt", "loss.csv", "manifest.json",
                 "summary.json", "hierarchy/hierarchy.json"):
        assert (run / name).exists(), name
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert "--steps" in manifest["argv"]
    assert len((run / "loss.csv").read_text().splitlines()) == 7


def test_train_variant_flag(workspace):
    out = workspace / "gl"
    assert main(["train", "--config", str(workspace / "cfg.json"), "--data", str(workspace / "data"),
                 "--out", str(out), "--steps", "2", "--variant", "GL"]) == 0
    assert json.loads((out / "config.json").read_text())["variant"] == "GL"


def test_roundtrip_zero_model(workspace, tmp_path, capsys):
    ckpt = workspace / "zero" / "model.ckpt"
    tpl = workspace / "data" / "template.obj"
    assert main(["roundtrip", "--ckpt", str(ckpt), str(tpl), "--out", str(tmp_path / "r.obj")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["mean_vertex_error"] == 0.0


def test_roundtrip_error_matches_files(workspace, tmp_path):
    ckpt = workspace / "run" / "model.ckpt"
    src = workspace / "data" / "pose_1.obj"
    assert main(["roundtrip", "--ckpt", str(ckpt), str(src), "--out", str(tmp_path / "r.obj")]) == 0
    a, b = load_mesh(src).vertices, load_mesh(tmp_path / "r.obj").vertices
    oracle = sum(np.sqrt(sum((x - y) ** 2 for x, y in zip(p, q))) for p, q in zip(a, b)) / len(a)
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["mean_vertex_error"] == pytest.approx(oracle, rel=1e-12)


def test_latent_interpolate(workspace, tmp_path):
    ckpt = str(workspace / "run" / "model.ckpt")
    d = workspace / "data"
    assert main(["latent", "interpolate", "--ckpt", ckpt, "--source", str(d / "pose_0.obj"),
                 "--target", str(d / "pose_3.obj"), "--out", str(tmp_path / "i")]) == 0
    objs = sorted((tmp_path / "i").glob("interp_*.obj"))
    assert len(objs) == 6
    for end, pose in ((objs[0], "pose_0.obj"), (objs[-1], "pose_3.obj")):
        assert main(["roundtrip", "--ckpt", ckpt, str(d / pose), "--out", str(tmp_path / "x.obj")]) == 0
        assert load_mesh(end) == load_mesh(tmp_path / "x.obj")


def test_latent_smooth_identity(workspace, tmp_path):
    ckpt = str(workspace / "run" / "model.ckpt")
    seq = [str(p) for p in sorted((workspace / "data").glob("pose_*.obj"))]
    assert main(["encode", "--ckpt", ckpt, *seq, "--out", str(tmp_path / "z.csv")]) == 0
    assert main(["decode", "--ckpt", ckpt, str(tmp_path / "z.csv"), "--out", str(tmp_path / "d")]) == 0
    assert main(["latent", "smooth", "--ckpt", ckpt, "--sequence", *seq, "--alpha", "1",
                 "--out", str(tmp_path / "s")]) == 0
    for i in range(len(seq)):
        a = (tmp_path / "s" / f"smooth_{i:03d}.obj").read_bytes()
        assert a == (tmp_path / "d" / f"decoded_{i:03d}.obj").read_bytes()


def test_latent_transfer_first_frame(workspace, tmp_path):
    ckpt = str(workspace / "run" / "model.ckpt")
    d = workspace / "data"
    seq = [str(d / f"pose_{i}.obj") for i in (0, 1, 2)]
    assert main(["latent", "transfer", "--ckpt", ckpt, "--sequence", *seq,
                 "--target-first", str(d / "pose_3.obj"), "--out", str(tmp_path / "t")]) == 0
    assert main(["encode", "--ckpt", ckpt, str(d / "pose_3.obj"), "--out", str(tmp_path / "m.csv")]) == 0
    assert main(["decode", "--ckpt", ckpt, str(tmp_path / "m.csv"), "--out", str(tmp_path / "m")]) == 0
    assert load_mesh(tmp_path / "t" / "transfer_000.obj") == load_mesh(tmp_path / "m" / "decoded_000.obj")


def test_latent_csv_only(tmp_path):
    (tmp_path / "a.csv").write_text("0,0\n")
    (tmp_path / "b.csv").write_text("1,2\n")
    assert main(["latent", "interpolate", "--source", str(tmp_path / "a.csv"), "--target",
                 str(tmp_path / "b.csv"), "--alphas", "0,0.5,1", "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "latents.csv").read_text().splitlines()
    assert rows == ["0.0,0.0", "0.5,1.0", "1.0,2.0"]


@pytest.mark.parametrize("scope", ["edl", "spiral", "spectral", "fc", "end2end"])
def test_gradcheck_scopes(scope, capsys):
    assert main(["gradcheck", "--scope", scope, "--seed", "3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_gradcheck_negative_control():
    assert main(["gradcheck", "--scope", "edl", "--inject-fault"]) == 1


def test_synth(tmp_path):
    assert main(["synth", "--count", "3", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("sample_*.obj"))) == 3
    assert (tmp_path / "hierarchy" / "hierarchy.json").exists()


def test_console_script_usage_error():
    out = subprocess.run([sys.executable, "-m", "demea.cli", "train"], capture_output=True, text=True)
    assert out.returncode == 2
