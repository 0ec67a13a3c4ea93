import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from magnet.cli import run
from magnet.data import read_slide

from test_data import sort_oracle

TRAIN_FAST = ["--steps", "20", "--d", "8", "--heads", "2", "--head-dim", "4", "--batch-size", "16"]


def tree_hashes(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def synth(path: Path, *extra) -> Path:
    assert run(["synth-gen", "--seed", "7", "--out", str(path), "--n-bins", "36", "--n-spots", "9",
                "--n-regions", "3", "--n-genes", "6", *extra]) == 0
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = synth(root / "data")
    assert run(["train", "--data", str(data), "--out", str(root / "run"), "--seed", "0", *TRAIN_FAST]) == 0
    return root, data, root / "run"


def test_synth_gen_is_deterministic(tmp_path):
    a = tree_hashes(synth(tmp_path / "s1"))
    b = tree_hashes(synth(tmp_path / "s2"))
    assert a == b
    assert {"manifest.json", "bins.csv", "counts.csv", "features_bin.csv", "run_manifest.json"} <= set(a)


def test_seed_falls_back_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MAGNET_SEED", "7")
    assert run(["synth-gen", "--out", str(tmp_path / "env"), "--n-bins", "36", "--n-spots", "9", "--n-regions",
                "3", "--n-genes", "6"]) == 0
    explicit = synth(tmp_path / "explicit")
    assert (tmp_path / "env" / "counts.csv").read_bytes() == (explicit / "counts.csv").read_bytes()
    monkeypatch.setenv("MAGNET_SEED", "abc")
    assert run(["synth-gen", "--out", str(tmp_path / "bad")]) == 2


def test_train_on_missing_directory(tmp_path, capsys):
    assert run(["train", "--data", str(tmp_path / "missing")]) == 3
    assert "manifest.json not found" in capsys.readouterr().err


def test_preprocess_top_250_genes(tmp_path):
    data = tmp_path / "wide"
    assert run(["synth-gen", "--seed", "3", "--out", str(data), "--n-bins", "50", "--n-genes", "300"]) == 0
    counts = read_slide(data).raw_counts.values
    assert run(["preprocess", "--data", str(data), "--top-genes", "250", "--out", str(tmp_path / "pp")]) == 0
    with open(tmp_path / "pp" / "counts.csv") as fh:
        header = next(csv.reader(fh))
    assert len(header) == 251
    original = read_slide(data).gene_names
    assert header[1:] == [original[g] for g in sort_oracle(counts, 250)]


def test_preprocess_sampling_is_recorded(workspace, tmp_path):
    _, data, _ = workspace
    assert run(["preprocess", "--data", str(data), "--sample-bins", "20", "--sample-spots", "5",
                "--seed", "2", "--out", str(tmp_path / "pp")]) == 0
    manifest = json.loads((tmp_path / "pp" / "manifest.json").read_text())
    assert len(manifest["sampled_bins"]) == 20 and len(manifest["sampled_spots"]) == 5
    assert manifest["seeds"]["preprocess"] == 2
    assert run(["preprocess", "--data", str(data), "--out", str(data)]) == 2


def test_build_graph(workspace, tmp_path):
    _, data, _ = workspace
    assert run(["build-graph", "--data", str(data), "--k", "8", "--out", str(tmp_path / "g")]) == 0
    rows = (tmp_path / "g" / "graph_k8.csv").read_text().splitlines()
    assert rows[0] == "src,dst,weight" and len(rows) == 1 + 36 * 8


def test_train_artifacts(workspace):
    _, _, out = workspace
    for name in ("checkpoint.magnet", "history.csv", "metrics.json", "loss.png", "run_manifest.json"):
        assert (out / name).exists(), name
    history = (out / "history.csv").read_text().splitlines()
    assert history[0].startswith("step,lr,L_p,L_c,L") and len(history) == 21
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) == {"bin", "spot", "region"}
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 0
    assert manifest["config"]["total_steps"] == 20
    assert all(len(h) == 64 for h in manifest["inputs"].values())


def test_eval_prints_table_and_writes_figures(workspace, tmp_path, capsys):
    _, data, out = workspace
    assert run(["eval", "--checkpoint", str(out / "checkpoint.magnet"), "--data", str(data), "--level", "all",
                "--out", str(tmp_path / "e")]) == 0
    printed = capsys.readouterr().out
    assert printed.splitlines()[0].split() == ["Resolution", "MSE", "MAE", "PCC"]
    assert "±" in printed
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert metrics["bin"]["n_units"] == 9  # the held-out quarter of 36 bins
    for lvl in ("bin", "spot", "region"):
        assert (tmp_path / "e" / f"pcc_{lvl}.png").exists()


def test_predict_and_heatmap(workspace, tmp_path):
    _, data, out = workspace
    ck = str(out / "checkpoint.magnet")
    assert run(["predict", "--checkpoint", ck, "--data", str(data), "--out", str(tmp_path / "p")]) == 0
    pred = (tmp_path / "p" / "predictions_bin.csv").read_text().splitlines()
    assert pred[0].split(",")[:3] == ["bin_index", "x", "y"] and len(pred) == 37
    assert run(["export-heatmap", "--checkpoint", ck, "--data", str(data), "--gene", "G0002", "--level",
                "spot", "--out", str(tmp_path / "h")]) == 0
    rows = (tmp_path / "h" / "heatmap_G0002_spot.csv").read_text().splitlines()
    assert rows[0] == "x,y,predicted_value" and len(rows) == 37
    assert (tmp_path / "h" / "heatmap_G0002_spot.png").exists()
    # heatmap values are the matching predict column
    assert run(["predict", "--checkpoint", ck, "--data", str(data), "--level", "spot",
                "--out", str(tmp_path / "p")]) == 0
    spot = np.loadtxt(tmp_path / "p" / "predictions_spot.csv", delimiter=",", skiprows=1)
    heat = np.loadtxt(tmp_path / "h" / "heatmap_G0002_spot.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(heat[:, 2], spot[:, 3 + 2])


def test_unknown_gene_is_a_usage_error(workspace, tmp_path, capsys):
    _, data, out = workspace
    code = run(["export-heatmap", "--checkpoint", str(out / "checkpoint.magnet"), "--data", str(data),
                "--gene", "NOPE", "--out", str(tmp_path / "h")])
    assert code == 2 and "NOPE" in capsys.readouterr().err


def test_outputs_are_reproducible_including_figures(workspace, tmp_path):
    _, data, out = workspace
    ck = str(out / "checkpoint.magnet")
    for name in ("a", "b"):
        assert run(["eval", "--checkpoint", ck, "--data", str(data), "--out", str(tmp_path / name)]) == 0
        assert run(["export-heatmap", "--checkpoint", ck, "--data", str(data), "--gene", "G0000",
                    "--out", str(tmp_path / name)]) == 0
    assert tree_hashes(tmp_path / "a") == tree_hashes(tmp_path / "b")


def test_inputs_are_never_modified(workspace, tmp_path):
    root, data, out = workspace
    before = tree_hashes(data), tree_hashes(out)
    ck = str(out / "checkpoint.magnet")
    for argv in (["preprocess", "--data", str(data), "--top-genes", "3"],
                 ["build-graph", "--data", str(data)],
                 ["eval", "--checkpoint", ck, "--data", str(data)],
                 ["predict", "--checkpoint", ck, "--data", str(data)]):
        assert run([*argv, "--out", str(tmp_path / argv[0])]) == 0
    assert (tree_hashes(data), tree_hashes(out)) == before


def test_cross_validation_layout(tmp_path):
    dirs = []
    for s in range(4):
        d = tmp_path / f"wsi{s}"
        assert run(["synth-gen", "--seed", str(s), "--slide-id", f"wsi{s}", "--out", str(d), "--n-bins", "16",
                    "--n-spots", "4", "--n-regions", "2", "--n-genes", "4"]) == 0
        dirs.append(str(d))
    out = tmp_path / "cv"
    argv = ["train", "--data", *dirs, "--folds", "2", "--out", str(out), "--steps", "5", "--batch-size", "8",
            "--d", "4", "--heads", "1", "--head-dim", "4", "--no-figures"]
    assert run(argv) == 0
    folds = json.loads((out / "folds.json").read_text())["folds"]
    assert sorted(x for f in folds for x in f) == [f"wsi{s}" for s in range(4)]
    metrics = json.loads((out / "metrics.json").read_text())
    assert len(metrics["bin"]["folds"]) == 2 and "std" in metrics["bin"]
    for i in range(2):
        from magnet.model import load_checkpoint

        _, meta = load_checkpoint(out / f"fold_{i}" / "checkpoint.magnet")
        assert not set(meta["train_slides"]) & set(meta["test_slides"])
        assert meta["test_slides"] == folds[i]


def test_config_file_and_overrides(workspace, tmp_path):
    _, data, _ = workspace
    cfg = tmp_path / "train.yaml"
    cfg.write_text("total_steps: 4\nd: 4\nheads: 1\nhead_dim: 4\nbatch_size: 8\nrounds: 1\n")
    assert run(["train", "--data", str(data), "--config", str(cfg), "--steps", "3", "--out",
                str(tmp_path / "r"), "--no-figures"]) == 0
    manifest = json.loads((tmp_path / "r" / "run_manifest.json").read_text())
    assert manifest["config"]["total_steps"] == 3 and manifest["config"]["rounds"] == 1
    cfg.write_text("bogus_option: 1\n")
    assert run(["train", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


@pytest.mark.parametrize("argv", [
    ["nonsense"],
    ["train"],
    ["train", "--data", "x", "--steps", "many"],
    ["eval", "--checkpoint", "c", "--data", "d", "--level", "cell"],
])
def test_bad_arguments_exit_2(argv):
    assert run(argv) == 2


def test_bad_config_values_exit_2(workspace, tmp_path):
    _, data, _ = workspace
    assert run(["train", "--data", str(data), "--batch-size", "1", "--out", str(tmp_path / "r")]) == 2


def test_divergence_exits_4(workspace, tmp_path, capsys):
    _, data, _ = workspace
    with np.errstate(all="ignore"):
        code = run(["train", "--data", str(data), "--lr", "1e12", "--out", str(tmp_path / "r"), *TRAIN_FAST[:2]])
    assert code == 4
    assert "step" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert run(["gradcheck", "--seed", "1", "--max-per-tensor", "3"]) == 0
    assert capsys.readouterr().out.startswith("PASS")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "magnet", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("synth-gen", "preprocess", "build-graph", "train", "eval", "predict", "export-heatmap",
                "gradcheck"):
        assert sub in proc.stdout


def test_run_manifest_does_not_depend_on_locations(workspace, tmp_path):
    _, data, _ = workspace
    moved = tmp_path / "elsewhere" / "data"
    moved.parent.mkdir()
    import shutil

    shutil.copytree(data, moved)
    assert run(["build-graph", "--data", str(data), "--out", str(tmp_path / "g1")]) == 0
    assert run(["build-graph", "--data", str(moved) + "/", "--out", str(tmp_path / "g2")]) == 0
    a = json.loads((tmp_path / "g1" / "run_manifest.json").read_text())
    assert a["argv"][1:3] == ["--data", "<input0>"]
    assert "<input0>/counts.csv" in a["inputs"]
    assert tree_hashes(tmp_path / "g1") == tree_hashes(tmp_path / "g2")
