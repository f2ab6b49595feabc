"""Synthetic corpora, split and label-subset management, multi-seed experiments."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import item_rng
from .evaluation import evaluate_predictions
from .geometry import CornerAnnotation, Panorama, corners_to_layout, layout_to_boundary
from .metrics import METRIC_NAMES, MetricsReport
from .predictor import Predictor
from .scenes import generate_scene
from .training import TrainConfig, normalize_mode, predict_eval, train

log = logging.getLogger(__name__)

WORKERS_ENV = "PANOLAYOUT_WORKERS"
SPLITS = ("train", "val", "test")


class LeakageError(AssertionError):
    pass


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# splits


@dataclass
class DatasetManifest:
    """Split membership by room id; image and annotation paths derive from the id."""

    splits: dict
    provenance: str = "synthetic"
    seed: int | None = None
    height: int = 64
    width: int = 256

    def __post_init__(self):
        seen = {}
        for name, ids in self.splits.items():
            for i in ids:
                if i in seen:
                    raise ManifestError(f"room {i} is in both {seen[i]} and {name}")
                seen[i] = name

    @staticmethod
    def image_path(room):
        return f"images/{room}.png"

    @staticmethod
    def annotation_path(room):
        return f"annotations/{room}.json"

    def to_json(self):
        return {
            "provenance": self.provenance,
            "seed": self.seed,
            "height": self.height,
            "width": self.width,
            "splits": {
                name: [[self.image_path(r), self.annotation_path(r)] for r in ids]
                for name, ids in self.splits.items()
            },
        }

    @classmethod
    def from_json(cls, d):
        splits = {name: [Path(img).stem for img, _ in pairs] for name, pairs in d["splits"].items()}
        return cls(splits, d.get("provenance", "external"), d.get("seed"), d.get("height", 64), d.get("width", 256))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def split_sizes(n, fractions=(8, 1, 2)):
    """Integer split sizes in the given proportions, summing to ``n``."""
    f = np.asarray(fractions, dtype=float)
    sizes = np.floor(n * f / f.sum()).astype(int)
    sizes[0] += n - sizes.sum()
    return dict(zip(SPLITS, sizes.tolist()))


def make_splits(ids, sizes, seed):
    """Disjoint random ``train``/``val``/``test`` splits of ``ids``."""
    ids = list(ids)
    if sum(sizes.values()) > len(ids):
        raise ValueError(f"split sizes {sizes} exceed corpus of {len(ids)}")
    order = item_rng(seed, 0xD5).permutation(len(ids))
    out, pos = {}, 0
    for name in SPLITS:
        k = int(sizes.get(name, 0))
        out[name] = sorted(ids[i] for i in order[pos:pos + k])
        pos += k
    return out


def subsample_labels(manifest, n, seed, nested=True):
    """Labeled subset of ``n`` training rooms and the unlabeled pool (train + val).

    With ``nested`` the subset is a prefix of one seed-dependent permutation, so
    smaller label counts are subsets of larger ones.
    """
    train_ids = list(manifest.splits["train"])
    if n > len(train_ids):
        raise ValueError(f"{n} labels requested but only {len(train_ids)} training rooms")
    if nested:
        perm = item_rng(seed, 0x1AB).permutation(len(train_ids))
    else:
        perm = item_rng(seed, 0x1AB, n).permutation(len(train_ids))
    labeled = [train_ids[i] for i in perm[:n]]
    pool = train_ids + list(manifest.splits.get("val", []))
    assert_no_leakage(manifest, pool)
    return labeled, pool


def assert_no_leakage(manifest, pool):
    test = set(manifest.splits.get("test", []))
    leaked = sorted(test.intersection(pool))
    if leaked:
        raise LeakageError(f"test rooms in unlabeled pool: {leaked[:5]}")


# ---------------------------------------------------------------------------
# corpora


@dataclass
class Dataset:
    """In-memory rooms: images ``(N, 3, H, W)`` in [0, 1] plus ground truth."""

    ids: list
    images: np.ndarray
    annotations: list
    layouts: list

    def __len__(self):
        return len(self.ids)

    def targets(self):
        W = self.images.shape[-1]
        return [layout_to_boundary(L, W) for L in self.layouts]

    def subset(self, ids):
        index = {r: k for k, r in enumerate(self.ids)}
        sel = [index[r] for r in ids]
        return Dataset(list(ids), self.images[sel], [self.annotations[k] for k in sel], [self.layouts[k] for k in sel])

    @property
    def n_corners(self):
        return [L.n_corners for L in self.layouts]


def room_corner_count(rng, min_corners, max_corners):
    if min_corners < 4 or min_corners % 2 or max_corners % 2 or max_corners < min_corners:
        raise ValueError("corner counts must be even, >= 4, and min <= max")
    return int(rng.choice(np.arange(min_corners, max_corners + 1, 2)))


def generate_rooms(n, seed, min_corners=4, max_corners=12, height=64, width=256, start=0):
    """``n`` synthetic scenes; room ``k`` depends only on ``(seed, k)``."""
    scenes = []
    for k in range(start, start + n):
        rng = item_rng(seed, 0x5C, k)
        scenes.append(generate_scene(rng, room_corner_count(rng, min_corners, max_corners), height, width))
    return scenes


def synthetic_dataset(sizes, seed, min_corners=4, max_corners=12, height=64, width=256):
    """Manifest plus in-memory dataset, without touching the disk."""
    n = sum(sizes.values())
    scenes = generate_rooms(n, seed, min_corners, max_corners, height, width)
    ids = [f"room_{k:05d}" for k in range(n)]
    manifest = DatasetManifest(make_splits(ids, sizes, seed), "synthetic", seed, height, width)
    data = Dataset(
        ids,
        np.stack([s.panorama.pixels for s in scenes]),
        [s.annotation for s in scenes],
        [s.layout for s in scenes],
    )
    return manifest, data


def write_corpus(out, n, seed, min_corners=4, max_corners=12, height=64, width=256, sizes=None):
    """Render ``n`` rooms to ``out/images``, ``out/annotations`` and write ``out/manifest.json``."""
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    scenes = generate_rooms(n, seed, min_corners, max_corners, height, width)
    ids = [f"room_{k:05d}" for k in range(n)]
    for rid, s in zip(ids, scenes):
        s.panorama.save_png(out / DatasetManifest.image_path(rid))
        s.annotation.save(out / DatasetManifest.annotation_path(rid))
    manifest = DatasetManifest(make_splits(ids, sizes or split_sizes(n), seed), "synthetic", seed, height, width)
    manifest.save(out / "manifest.json")
    return manifest


def load_corpus(root):
    """Manifest and dataset of every room it lists."""
    root = Path(root)
    manifest = DatasetManifest.load(root / "manifest.json")
    ids = [r for name in manifest.splits for r in manifest.splits[name]]
    images, anns, layouts = [], [], []
    for rid in ids:
        images.append(Panorama.load_png(root / DatasetManifest.image_path(rid)).pixels)
        ann = CornerAnnotation.load(root / DatasetManifest.annotation_path(rid))
        anns.append(ann)
        layouts.append(corners_to_layout(ann))
    return manifest, Dataset(ids, np.stack(images), anns, layouts)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentSpec:
    """What to run: label counts x modes x seeds, sharing one base training config.

    ``overrides`` maps a mode to TrainConfig fields that differ for it.
    ``data`` is either a corpus directory or synthetic split sizes.
    """

    label_counts: list = field(default_factory=lambda: [25])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3])
    modes: list = field(default_factory=lambda: ["supervised", "mean_teacher"])
    base: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    data: dict = field(default_factory=lambda: {"synthetic": {"train": 400, "val": 50, "test": 100}, "seed": 0})
    metrics: list = field(default_factory=lambda: list(METRIC_NAMES))

    def __post_init__(self):
        self.modes = [normalize_mode(m) for m in self.modes]
        self.overrides = {normalize_mode(k): v for k, v in self.overrides.items()}
        if len(self.seeds) < 2:
            raise ValueError("at least two seeds are needed for a standard deviation")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    def config(self, mode, seed):
        d = dict(self.base)
        d.update(self.overrides.get(mode, {}))
        d.update(mode=mode, seed=seed)
        return TrainConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return dataclasses.asdict(self)


def load_experiment_data(spec, root=None):
    d = spec.data
    if "path" in d:
        base = Path(d["path"])
        if not base.is_absolute() and root is not None:
            base = Path(root) / base
        return load_corpus(base)
    syn = dict(d.get("synthetic", {}))
    return synthetic_dataset(
        {k: syn.get(k, 0) for k in SPLITS},
        d.get("seed", 0),
        d.get("min_corners", 4),
        d.get("max_corners", 12),
        d.get("height", 64),
        d.get("width", 256),
    )


def run_one(config, manifest, data, n_labels, log_path=None):
    """Train one configuration on one label subset and score it on the test split."""
    labeled_ids, pool_ids = subsample_labels(manifest, n_labels, config.seed)
    lab = data.subset(labeled_ids)
    pool = data.subset(pool_ids)
    val = data.subset(manifest.splits["val"])
    test = data.subset(manifest.splits["test"])
    if config.steps_per_epoch is None:
        # every mode gets the iteration budget of one pass over the unlabeled pool
        config = dataclasses.replace(config, steps_per_epoch=math.ceil(len(pool) / config.batch_unlabeled))
    predictor = Predictor(config.predictor_config())
    H = data.images.shape[2]
    ckpt = train(
        (lab.images, lab.targets()),
        pool.images,
        config,
        val=(val.images, val.layouts, val.annotations) if len(val) else None,
        predictor=predictor,
        log_path=log_path,
    )
    preds = predict_eval(ckpt, test.images, predictor)
    return evaluate_predictions(preds, test.layouts, test.annotations, H), ckpt


def _job(args):
    config, manifest, data, n_labels, log_path = args
    t0 = time.time()
    try:
        summary, _ = run_one(config, manifest, data, n_labels, log_path)
        return {"summary": summary, "seconds": time.time() - t0}
    except Exception as err:  # recorded, the remaining runs still aggregate
        return {"error": f"{type(err).__name__}: {err}", "seconds": time.time() - t0}


def worker_count(default=1):
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1")
    return n


@dataclass
class ExperimentResult:
    report: MetricsReport
    runs: list
    failures: list

    def table(self, metrics=("iou3d", "iou2d", "corner_error", "pixel_error")):
        lines = [self.report.table(metrics)]
        for f in self.failures:
            lines.append(f"failed: {f['method']} labels={f['labels']} seed={f['seed']}: {f['error']}")
        return "\n".join(lines)


def run_experiment(spec, data=None, out_dir=None, workers=None):
    """Every (mode, label count, seed) run, evaluated on the test split.

    Runs are independent and may execute in parallel; results are collected in
    a fixed order, so the report does not depend on the worker count.
    """
    manifest, dataset = data if data is not None else load_experiment_data(spec)
    for n in spec.label_counts:
        for seed in spec.seeds:
            subsample_labels(manifest, n, seed)  # validates sizes and leakage up front
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    jobs, keys = [], []
    for n in spec.label_counts:
        for mode in spec.modes:
            for seed in spec.seeds:
                cfg = spec.config(mode, seed)
                log_path = out_dir / f"log_{mode}_{n}_{seed}.csv" if out_dir is not None else None
                jobs.append((cfg, manifest, dataset, n, log_path))
                keys.append((mode, n, seed))
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    report = MetricsReport()
    runs, failures = [], []
    for (mode, n, seed), res in zip(keys, results):
        if "error" in res:
            failures.append({"method": mode, "labels": n, "seed": seed, "error": res["error"]})
            log.warning("run %s/%s/%s failed: %s", mode, n, seed, res["error"])
            continue
        for bucket, values in res["summary"].items():
            report.add(mode, n, seed, values, bucket)
        runs.append({"method": mode, "labels": n, "seed": seed, "seconds": res["seconds"]})
    result = ExperimentResult(report, runs, failures)
    if out_dir is not None:
        report.write_csv(out_dir / "report.csv")
        (out_dir / "table.txt").write_text(result.table() + "\n")
    return result


ABLATION_PARAMS = {"lambda": "lambda_max", "rampup": "ramp_fraction", "alpha": "alpha"}


def ablate(spec, param, values, data=None, workers=None):
    """Mean-Teacher sweep of one hyper-parameter; one row per value with mean and std per metric."""
    if param not in ABLATION_PARAMS:
        raise ValueError(f"unknown ablation parameter {param!r}; expected one of {sorted(ABLATION_PARAMS)}")
    key = ABLATION_PARAMS[param]
    data = data if data is not None else load_experiment_data(spec)
    rows = []
    for value in values:
        overrides = dict(spec.overrides)
        overrides["mean_teacher"] = {**overrides.get("mean_teacher", {}), key: float(value)}
        sub = dataclasses.replace(spec, modes=["mean_teacher"], overrides=overrides)
        res = run_experiment(sub, data=data, workers=workers)
        for n in spec.label_counts:
            agg = res.report.aggregate("mean_teacher", n)
            row = {"param": param, "value": float(value), "labels": n, "runs": len(res.report.runs("mean_teacher", n))}
            for k in METRIC_NAMES:
                if k in agg:
                    row[f"{k}_mean"], row[f"{k}_std"] = agg[k][0], agg[k][1]
            rows.append(row)
    return rows


def write_rows(rows, dest):
    """CSV of dict rows to a path or an open text stream."""
    cols = list(dict.fromkeys(k for r in rows for k in r))
    if hasattr(dest, "write"):
        w = csv.DictWriter(dest, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
        return
    with open(dest, "w", newline="") as fh:
        write_rows(rows, fh)
