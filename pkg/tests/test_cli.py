import csv
import json

import pytest

from panolayout.cli import main

TINY = {"height": 32, "width": 64, "channels": [4, 4, 8, 8], "mix_channels": 8, "mix_kernel": 3}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["gen-data", "--out", str(root), "--rooms", "22", "--max-corners", "6", "--height", "32", "--width", "64", "--seed", "5"]) == 0
    return root


def test_gen_data_is_reproducible(corpus, tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--rooms", "22", "--max-corners", "6", "--height", "32", "--width", "64", "--seed", "5"]) == 0
    assert (tmp_path / "manifest.json").read_bytes() == (corpus / "manifest.json").read_bytes()
    assert (tmp_path / "images" / "room_00003.png").read_bytes() == (corpus / "images" / "room_00003.png").read_bytes()


def test_train_then_eval_matches_experiment_row(corpus, tmp_path):
    cfg = {"epochs": 1, "steps_per_epoch": 3, "predictor": TINY}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    ck = tmp_path / "m.ckpt"
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(corpus), "--mode", "supervised", "--labels", "5", "--seed", "1", "--out", str(ck)]) == 0
    assert (tmp_path / "m.csv").read_text().startswith("t,lr,lambda,L_l,L_u,val_3diou")
    report = tmp_path / "r.csv"
    assert main(["eval", "--ckpt", str(ck), "--data", str(corpus), "--split", "test", "--report", str(report)]) == 0
    rows = list(csv.DictReader(open(report)))
    single = next(r for r in rows if r["bucket"] == "all" and r["seed"] == "1")

    spec = {"label_counts": [5], "seeds": [1, 2], "modes": ["supervised"], "base": cfg, "data": {"path": str(corpus)}}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["experiment", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "exp")]) == 0
    exp = list(csv.DictReader(open(tmp_path / "exp" / "report.csv")))
    row = next(r for r in exp if r["bucket"] == "all" and r["seed"] == "1")
    for k in ("iou3d", "corner_error", "pixel_error"):
        assert float(row[k]) == pytest.approx(float(single[k]), abs=1e-5)


def test_ablate_alpha_rows(corpus, tmp_path, capsys):
    spec = {"label_counts": [5], "seeds": [0, 1], "base": {"epochs": 1, "steps_per_epoch": 1, "predictor": TINY}, "data": {"path": str(corpus)}}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    out = tmp_path / "ab.csv"
    assert main(["ablate", "--param", "alpha", "--values", "0,0.99,0.999,0.9999", "--spec", str(tmp_path / "spec.json"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4 and [float(r["value"]) for r in rows] == [0.0, 0.99, 0.999, 0.9999]


def test_errors_are_json(tmp_path, capsys):
    code = main(["eval", "--ckpt", str(tmp_path / "missing"), "--data", str(tmp_path), "--report", str(tmp_path / "r.csv")])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "FileNotFoundError" and err["command"] == "eval"


def test_too_many_labels_is_an_error(corpus, tmp_path, capsys):
    code = main(["train", "--data", str(corpus), "--mode", "mean-teacher", "--labels", "500", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "labels requested" in json.loads(capsys.readouterr().err.strip())["message"]
