import csv
import json

import numpy as np
import pytest

from contact_quality.cli import main


@pytest.fixture(scope="module")
def run_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(dataset_dir), "--out", str(out), "--epochs", "1"]) == 0
    return out


def write_scene(path, surfaces):
    rows = ["x,y,z,surface_id"]
    for sid, pts in surfaces.items():
        rows += [f"{x},{y},{z},{sid}" for x, y, z in pts]
    path.write_text("\n".join(rows) + "\n")
    return path


def square(offset=(0, 0, 0), n=9, side=1.0):
    u = np.linspace(0, side, n)
    xx, yy = np.meshgrid(u, u, indexing="ij")
    return np.c_[xx.ravel(), yy.ravel(), np.zeros(n * n)] + np.asarray(offset, dtype=float)


@pytest.fixture
def pair_file(tmp_path):
    return write_scene(tmp_path / "pair.csv", {1: square(), 2: square((0.1, 0, 0.01))})


# ---- generate / train


def test_generate_writes_manifest_and_points(dataset_dir):
    entries = json.loads((dataset_dir / "manifest.json").read_text())
    assert len(entries) == 1500
    assert len(list((dataset_dir / "points").glob("*.csv"))) == 300


def test_generate_into_unusable_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate", "--out", str(blocker / "data")]) == 1
    assert "error" in capsys.readouterr().err
    assert not (blocker.parent / "data").exists()


def test_train_one_epoch(run_dir):
    rows = list(csv.reader((run_dir / "history.csv").open()))
    assert rows[0] == ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"]
    assert len(rows) == 2 and rows[1][0] == "1"
    report = json.loads((run_dir / "train_report.json").read_text())
    assert report["epochs_run"] == 1
    assert report["config"]["training"]["epochs"] == 1
    assert len(report["weights_sha256"]) == 64
    assert {"accuracy", "in_band_rate"} <= set(report["validation"])


def test_train_missing_manifest(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 1
    assert "manifest not found" in capsys.readouterr().err


# ---- score


def test_score_to_stdout(run_dir, pair_file, capsys):
    assert main(["score", str(pair_file), "--weights", str(run_dir / "weights.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    p = doc["probabilities"]
    assert doc["score"] == pytest.approx(100 * p["P1"] + 50 * p["P3"], abs=1e-9)
    assert doc["pair_id"] == "pair" and doc["oracle"]["class"] in (1, 2, 3)
    assert doc["net"]["fine_res"] == 16


def test_score_malformed_file(run_dir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,z,surface_id\n0,0,0,1\n1,oops,0,2\n")
    assert main(["score", str(bad), "--weights", str(run_dir / "weights.json")]) == 1
    assert "bad.csv:3" in capsys.readouterr().err


def test_score_emit_grids(run_dir, pair_file, tmp_path):
    out = tmp_path / "s"
    assert main(["score", str(pair_file), "--weights", str(run_dir / "weights.json"),
                 "--out", str(out), "--emit-grids"]) == 0
    names = sorted(p.name for p in (out / "grids").iterdir())
    assert names == sorted(f"{t}{s}.csv" for t in ("coarse", "fine")
                           for s in ("", "_slice_x", "_slice_y", "_slice_z"))
    assert json.loads((out / "score.json").read_text())["config"]["options"]["emit_grids"]


def test_emit_grids_needs_out(run_dir, pair_file):
    assert main(["score", str(pair_file), "--weights", str(run_dir / "weights.json"),
                 "--emit-grids"]) == 1


def test_resolution_flag_must_match_weights(run_dir, pair_file, capsys):
    assert main(["score", str(pair_file), "--weights", str(run_dir / "weights.json"),
                 "--fine-res", "32"]) == 1
    assert "disagrees" in capsys.readouterr().err


def test_missing_weights(pair_file, tmp_path):
    assert main(["score", str(pair_file), "--weights", str(tmp_path / "w.json")]) == 1


# ---- sweep


def test_sweep_csv(run_dir, tmp_path):
    assert main(["sweep", "rotate", "--steps", "3", "--weights", str(run_dir / "weights.json"),
                 "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "sweep_rotate.csv").open()))
    assert rows[0] == ["parameter", "P1", "P2", "P3", "C"]
    assert [float(r[0]) for r in rows[1:]] == [0.0, 45.0, 90.0]
    meta = json.loads((tmp_path / "sweep_rotate.json").read_text())
    assert meta["config"]["options"] == {"kind": "rotate", "steps": 3}


def test_sweep_unknown_kind():
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "shear"])
    assert exc.value.code == 2


# ---- detect


@pytest.fixture
def scene_file(tmp_path):
    return write_scene(tmp_path / "scene.csv", {
        3: square(), 5: square((0, 0, 0.03)), 8: square((0, 0, 0.2)), 9: square((5, 0, 0)),
    })


def detect_pairs(scene_file, tmp_path, *extra):
    out = tmp_path / "det"
    assert main(["detect", str(scene_file), "--out", str(out), *extra]) == 0
    doc = json.loads((out / "pairs.json").read_text())
    return doc, {(p["surface_a"], p["surface_b"]) for p in doc["pairs"]}


def test_detect_pairs(scene_file, tmp_path):
    doc, pairs = detect_pairs(scene_file, tmp_path)
    assert pairs == {(3, 5)}
    assert doc["surface_ids"] == [3, 5, 8, 9]
    assert doc["tolerance"] == pytest.approx(0.05 * doc["body_diagonal"])


def test_detect_larger_fraction_is_superset(scene_file, tmp_path):
    _, small = detect_pairs(scene_file, tmp_path, "--fraction", "0.05")
    _, large = detect_pairs(scene_file, tmp_path, "--fraction", "0.2")
    assert small < large and large == {(3, 5), (3, 8), (5, 8)}


def test_detect_single_surface(tmp_path, capsys):
    scene = write_scene(tmp_path / "one.csv", {1: square()})
    assert main(["detect", str(scene)]) == 1
    assert "at least 2 surfaces" in capsys.readouterr().err


def test_env_override_and_flag_precedence(scene_file, tmp_path, monkeypatch):
    monkeypatch.setenv("CQ_FRACTION", "10")
    doc, pairs = detect_pairs(scene_file, tmp_path)
    assert doc["config"]["options"]["fraction"] == 10.0 and len(pairs) == 6
    _, pairs = detect_pairs(scene_file, tmp_path, "--fraction", "0.05")
    assert pairs == {(3, 5)}


def test_bad_env_value(monkeypatch, capsys):
    monkeypatch.setenv("CQ_SEED", "abc")
    assert main(["detect", "x.csv"]) == 2
    assert "CQ_SEED" in capsys.readouterr().err


# ---- eval


def test_eval_validation(run_dir, dataset_dir, tmp_path):
    assert main(["eval", "--weights", str(run_dir / "weights.json"), "--data", str(dataset_dir),
                 "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "eval_validation.json").read_text())["metrics"]
    assert m["n"] == 375
    assert 0 <= m["accuracy"] <= 1 and 0 <= m["in_band_rate"] <= 1


def test_eval_table(run_dir, tmp_path):
    assert main(["eval", "--table", "--weights", str(run_dir / "weights.json"),
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "eval_table.json").read_text())
    assert len(doc["rows"]) == 24
    assert doc["metrics"]["n_in_band"] == sum(r["in_band"] for r in doc["rows"])


def test_eval_empty_dataset(run_dir, tmp_path, capsys):
    (tmp_path / "manifest.json").write_text("[]")
    assert main(["eval", "--weights", str(run_dir / "weights.json"), "--data", str(tmp_path)]) == 1
    assert "no samples" in capsys.readouterr().err
