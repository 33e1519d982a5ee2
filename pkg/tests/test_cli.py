import csv
import json

import pytest

from mgmc import cli

SMALL = ["--m", "10", "--n", "12", "--row-communities", "2", "--col-communities", "3", "--rank", "2"]
FAST = ["--p", "2", "--q", "3", "--hidden", "3", "--T", "2", "--rank", "2", "--eval-every", "1", "--no-wall-time"]


def run(*argv):
    return cli.run([str(a) for a in argv])


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert run("gen-synthetic", "--seed", 7, "--out", out, *SMALL) == 0
    return out


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_gen_synthetic_is_byte_identical(tmp_path, dataset):
    again = tmp_path / "again"
    assert run("gen-synthetic", "--seed", 7, "--out", again, *SMALL) == 0
    assert (again / "observed.tsv").read_bytes() == (dataset / "observed.tsv").read_bytes()
    assert json.loads((dataset / "manifest.json").read_text())["config"]["m"] == 10


def test_train_zero_iterations_writes_checkpoint(tmp_path, dataset):
    out = tmp_path / "run"
    assert run("train", "--model", "rgcnn", "--data", dataset, "--out", out, "--iters", 0, *FAST) == 0
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert ckpt["kind"] == "rgcnn"
    rows = list(csv.reader((out / "history.csv").open()))
    assert len(rows) == 2
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "train" and man["config"]["iters"] == 0
    assert any(k.endswith("observed.tsv") for k in man["inputs"])


def test_train_leaves_input_untouched(tmp_path, dataset):
    before = snapshot(dataset)
    assert run("train", "--model", "srgcnn", "--data", dataset, "--out", tmp_path / "r", "--iters", 2, *FAST) == 0
    assert snapshot(dataset) == before


def test_manifest_config_reproduces_run(tmp_path, dataset):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--model", "srgcnn", "--data", dataset, "--out", a, "--iters", 3, *FAST) == 0
    assert run("train", "--config", a / "manifest.json", "--out", b, "--no-wall-time") == 0
    for name in ("checkpoint.json", "history.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_flags_override_config_file(tmp_path, dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 0.5, "iters": 1, "model": "srgcnn"}))
    out = tmp_path / "r"
    assert run("train", "--config", cfg, "--lr", 0.01, "--data", dataset, "--out", out, *FAST) == 0
    resolved = json.loads((out / "manifest.json").read_text())["config"]
    assert resolved["lr"] == 0.01 and resolved["iters"] == 1 and resolved["model"] == "srgcnn"
    assert resolved["mu"] == 1.0


def test_unknown_config_key_is_usage_error(tmp_path, dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 0.5}))
    assert run("train", "--config", cfg, "--data", dataset, "--out", tmp_path / "r") == 2


def test_usage_errors(tmp_path, capsys):
    assert run("no-such-command") == 2
    assert run("train", "--iters", "many") == 2
    assert run("evaluate", "--data", tmp_path) == 2
    assert run("train", "--model", "mlp", "--data", tmp_path, "--out", tmp_path / "o") == 2


def test_missing_dataset_is_runtime_error(tmp_path, capsys):
    missing = tmp_path / "absent"
    assert run("train", "--data", missing, "--out", tmp_path / "o") == 1
    assert str(missing) in capsys.readouterr().err


def test_data_dir_environment_default(tmp_path, monkeypatch, dataset):
    monkeypatch.setenv(cli.DATA_ENV, str(tmp_path))
    assert run("baseline", "--method", "svt", "--data", "data", "--iters", 5) == 0
    monkeypatch.delenv(cli.DATA_ENV)
    assert run("baseline", "--method", "svt", "--iters", 5) == 2


def test_evaluate_prints_rmse(tmp_path, dataset, capsys):
    out = tmp_path / "r"
    assert run("train", "--model", "srgcnn", "--data", dataset, "--out", out, "--iters", 2, *FAST) == 0
    capsys.readouterr()
    assert run("evaluate", "--checkpoint", out / "checkpoint.json", "--data", dataset) == 0
    printed = float(capsys.readouterr().out.strip())
    history = list(csv.DictReader((out / "history.csv").open()))
    assert printed == pytest.approx(float(history[-1]["test_rmse"]), abs=1e-6)


@pytest.mark.parametrize("method", ["svt", "gmc", "grals"])
def test_baseline_methods(tmp_path, dataset, method, capsys):
    out = tmp_path / method
    assert run("baseline", "--method", method, "--data", dataset, "--out", out, "--iters", 20, "--rank", 2) == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert rows[0]["method"] == method and float(rows[0]["rmse"]) >= 0
    assert run("baseline", "--method", "nope", "--data", dataset) == 2


@pytest.mark.parametrize("kind", ["rgcnn", "srgcnn"])
def test_export_filters(tmp_path, dataset, kind):
    out = tmp_path / "r"
    assert run("train", "--model", kind, "--data", dataset, "--out", out, "--iters", 0, *FAST) == 0
    fig = tmp_path / "fig"
    assert run("export-filters", "--checkpoint", out / "checkpoint.json", "--out", fig, "--grid", 5) == 0
    files = sorted(p.name for p in fig.glob("*.csv"))
    if kind == "rgcnn":
        assert files == ["filter_1.csv", "filter_2.csv", "filter_3.csv"]
        assert sum(1 for _ in (fig / "filter_1.csv").open()) == 1 + 25
    else:
        assert files == ["col_filters.csv", "row_filters.csv"]


def test_compare_table(tmp_path, dataset):
    out = tmp_path / "table.csv"
    assert run("compare", "--data", dataset, "--out", out, "--iters", 2, *FAST, "--srgcnn-rank", 2) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["method"] for r in rows] == ["gmc", "grals", "rgcnn", "srgcnn"]
    params = {r["method"]: int(r["parameters"]) for r in rows}
    assert params["gmc"] == 10 * 12 and params["grals"] == (10 + 12) * 2
    assert {r["method"]: r["complexity"] for r in rows}["srgcnn"] == "O(m+n)"
