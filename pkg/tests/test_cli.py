import csv
import json

import numpy as np
import pytest

from bayestree import cli
from bayestree.harness import generate_synthetic, SyntheticSpec


@pytest.fixture
def data_csv(tmp_path):
    d = generate_synthetic(SyntheticSpec(120, 3, 2, seed=1))
    p = tmp_path / "train.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        for x, y in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in x] + [("neg", "pos")[y]])
    return p


def run(argv):
    return cli.main([str(a) for a in argv])


def test_fit_then_predict(tmp_path, data_csv, capsys):
    out = tmp_path / "fit"
    assert run(["fit", "--data", data_csv, "--iterations", 200, "--workers", 1, "--out", out]) == 0
    meta = json.loads((out / "samples.json").read_text())
    assert sorted(meta["label_names"]) == ["neg", "pos"] and len(meta["trees"]) == 100
    report = json.loads((out / "report.json").read_text())
    assert report["metrics"]["retained"] == 100
    pred = tmp_path / "pred.csv"
    assert run(["predict", "--model", out / "samples.json", "--data", data_csv, "--out", pred]) == 0
    assert "accuracy:" in capsys.readouterr().out
    with open(pred) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 120 and {r["predicted"] for r in rows} <= {"neg", "pos"}
    p = np.array([[float(r["p_neg"]), float(r["p_pos"])] for r in rows])
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_predict_features_only(tmp_path, data_csv):
    out = tmp_path / "fit"
    run(["fit", "--data", data_csv, "--iterations", 100, "--workers", 1, "--out", out])
    feats = tmp_path / "x.csv"
    feats.write_text("0.1,0.2,0.3\n0.9,0.8,0.7\n")
    pred = tmp_path / "p.csv"
    assert run(["predict", "--model", out / "samples.json", "--data", feats, "--out", pred,
                "--no-labels"]) == 0
    assert len(pred.read_text().strip().splitlines()) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("0.1,0.2\n")
    with pytest.raises(SystemExit):
        run(["predict", "--model", out / "samples.json", "--data", bad, "--out", pred, "--no-labels"])


def test_cv_is_deterministic(tmp_path):
    blocks = []
    for name in ("a", "b"):
        out = tmp_path / name
        run(["cv", "--synthetic", "100,2", "--method", "sumd", "--iterations", 64, "--workers", 4,
             "--folds", 3, "--out", out])
        blocks.append(json.loads((out / "report.json").read_text())["metrics"])
    assert json.dumps(blocks[0], sort_keys=True) == json.dumps(blocks[1], sort_keys=True)
    assert len(blocks[0]["accuracy"]["folds"]) == 3


def test_sweep_writes_one_row_per_worker_count(tmp_path, monkeypatch):
    monkeypatch.setenv("BAYESTREE_WORKERS", "1")
    out = tmp_path / "s"
    run(["sweep", "--synthetic", "100,2", "--method", "dp", "--iterations", 40,
         "--workers-list", "1,2,4", "--repetitions", 1, "--out", out])
    with open(out / "report_timings.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["workers"] for r in rows] == ["1", "2", "4"]


@pytest.mark.parametrize("argv", [
    ["fit", "--synthetic", "100,2", "--iterations", 10, "--burn-in", 10],
    ["fit", "--synthetic", "nonsense"],
    ["fit", "--synthetic", "100,2", "--alpha", 0],
])
def test_bad_arguments_exit(tmp_path, argv):
    with pytest.raises(SystemExit):
        run(argv + ["--out", tmp_path])


def test_missing_data_source():
    with pytest.raises(SystemExit):
        run(["fit"])
