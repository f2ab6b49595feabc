"""Command-line entry point: ``panolayout <command> ...``.

Every failure exits non-zero with a one-line JSON error object on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ABLATION_PARAMS,
    ExperimentSpec,
    ablate,
    load_corpus,
    run_experiment,
    subsample_labels,
    write_corpus,
    write_rows,
)
from .evaluation import evaluate_predictions
from .metrics import MetricsReport
from .predictor import Predictor
from .training import TrainConfig, predict_eval, train


def _parser():
    p = argparse.ArgumentParser(prog="panolayout", description="Semi-supervised panorama room layout estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--rooms", type=int, required=True)
    g.add_argument("--min-corners", type=int, default=4)
    g.add_argument("--max-corners", type=int, default=12)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config", help="JSON file with training options")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=["supervised", "mean-teacher", "pi-model"], required=True)
    t.add_argument("--labels", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path; the log goes next to it as .csv")

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--report", required=True)

    x = sub.add_parser("experiment", help="all modes x label counts x seeds")
    x.add_argument("--spec", required=True)
    x.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="Mean-Teacher hyper-parameter sweep")
    a.add_argument("--param", choices=sorted(ABLATION_PARAMS), required=True)
    a.add_argument("--values", required=True, help="comma-separated values")
    a.add_argument("--spec", required=True)
    a.add_argument("--out", help="CSV path (default: stdout)")
    return p


def cmd_gen_data(args):
    m = write_corpus(args.out, args.rooms, args.seed, args.min_corners, args.max_corners, args.height, args.width)
    return {k: len(v) for k, v in m.splits.items()}


def cmd_train(args):
    opts = json.loads(Path(args.config).read_text()) if args.config else {}
    opts.update(mode=args.mode, seed=args.seed)
    config = TrainConfig.from_dict(opts)
    manifest, data = load_corpus(args.data)
    labeled_ids, pool_ids = subsample_labels(manifest, args.labels, args.seed)
    lab, pool, val = data.subset(labeled_ids), data.subset(pool_ids), data.subset(manifest.splits["val"])
    if config.steps_per_epoch is None:
        config = dataclasses.replace(config, steps_per_epoch=math.ceil(len(pool) / config.batch_unlabeled))
    out = Path(args.out)
    ckpt = train(
        (lab.images, lab.targets()),
        pool.images,
        config,
        val=(val.images, val.layouts, val.annotations) if len(val) else None,
        log_path=out.with_suffix(".csv"),
    )
    ckpt.meta = {"labels": args.labels, "data": str(args.data)}
    save_checkpoint(ckpt, out)
    return {"checkpoint": str(out), "steps": ckpt.t_max, "best_val_iou3d": ckpt.best_val_iou3d}


def cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    manifest, data = load_corpus(args.data)
    if args.split not in manifest.splits:
        raise KeyError(f"split {args.split!r} not in manifest")
    part = data.subset(manifest.splits[args.split])
    predictor = Predictor(ckpt.config.predictor_config())
    preds = predict_eval(ckpt, part.images, predictor)
    summary = evaluate_predictions(preds, part.layouts, part.annotations, part.images.shape[2])
    report = MetricsReport()
    for bucket, values in summary.items():
        report.add(ckpt.config.mode, ckpt.meta.get("labels", ""), ckpt.config.seed, values, bucket)
    report.write_csv(args.report)
    return {k: round(v, 4) for k, v in summary["all"].items()}


def _load_spec(path):
    spec = ExperimentSpec.load(path)
    # corpus paths are relative to the spec file
    if "path" in spec.data and not Path(spec.data["path"]).is_absolute():
        spec.data = {**spec.data, "path": str(Path(path).parent / spec.data["path"])}
    return spec


def cmd_experiment(args):
    spec = _load_spec(args.spec)
    result = run_experiment(spec, out_dir=args.out)
    print(result.table())
    return {"runs": len(result.runs), "failures": len(result.failures), "report": str(Path(args.out) / "report.csv")}


def cmd_ablate(args):
    spec = _load_spec(args.spec)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    rows = ablate(spec, args.param, values)
    write_rows(rows, args.out or sys.stdout)
    return {"rows": len(rows)}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "ablate": cmd_ablate,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except Exception as err:
        sys.stderr.write(json.dumps({"error": type(err).__name__, "message": str(err), "command": args.command}) + "\n")
        return 1
    if summary is not None:
        sys.stderr.write(json.dumps(summary) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
