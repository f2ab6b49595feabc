"""Layout evaluation metrics and seed-level aggregation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import (
    CANONICAL_CAMERA_HEIGHT,
    CornerAnnotation,
    GeometryError,
    boundary_to_segmentation,
    layout_to_depth,
)

METRIC_NAMES = ("iou3d", "iou2d", "corner_error", "pixel_error", "rmse", "delta1")
DELTA1_THRESHOLD = 1.25


def _polygons(pred, gt):
    pp, gp = pred.polygon(), gt.polygon()
    if not pp.is_valid or not gp.is_valid or pp.area <= 0 or gp.area <= 0:
        raise GeometryError("degenerate floor polygon")
    return pp, gp


def iou2d(pred, gt):
    """Floor-plan IoU in percent."""
    pp, gp = _polygons(pred, gt)
    inter = pp.intersection(gp).area
    return 100.0 * inter / (pp.area + gp.area - inter)


def iou3d(pred, gt):
    """Volumetric IoU in percent of the extruded floor polygons.

    Both layouts are first brought to the canonical camera height, so a room
    occupies the vertical interval ``[-h_cam, h_ceil - h_cam]`` around the camera.
    """
    pred = pred.normalized(CANONICAL_CAMERA_HEIGHT)
    gt = gt.normalized(CANONICAL_CAMERA_HEIGHT)
    pp, gp = _polygons(pred, gt)
    inter_area = pp.intersection(gp).area
    lo = max(-pred.h_cam, -gt.h_cam)
    hi = min(pred.h_ceil - pred.h_cam, gt.h_ceil - gt.h_cam)
    v_inter = inter_area * max(0.0, hi - lo)
    v_pred = pp.area * pred.h_ceil
    v_gt = gp.area * gt.h_ceil
    return 100.0 * v_inter / (v_pred + v_gt - v_inter)


def corner_error(pred, gt, H, W):
    """Diagonal-normalized corner error in percent.

    Corners are pixel points ``(j, i)`` (or annotations, converted to their
    ceiling and floor corner points). Predictions are matched to ground truth
    by minimum total distance, with horizontal distance measured around the
    seam. Every unmatched point on either side costs one image diagonal, and
    the total is averaged over ``max(len(pred), len(gt))`` slots.
    """
    if isinstance(pred, CornerAnnotation):
        pred = pred.pixel_points(H, W)
    if isinstance(gt, CornerAnnotation):
        gt = gt.pixel_points(H, W)
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt, dtype=float).reshape(-1, 2)
    if len(gt) == 0:
        return math.nan
    diag = math.hypot(H, W)
    slots = max(len(pred), len(gt))
    if len(pred) == 0:
        return 100.0
    dx = np.abs(pred[:, None, 0] - gt[None, :, 0])
    dx = np.minimum(dx, W - dx)
    dy = pred[:, None, 1] - gt[None, :, 1]
    cost = np.hypot(dx, dy)
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum() + diag * (slots - len(rows))
    return 100.0 * total / slots / diag


def pixel_error(pred, gt, H, W=None):
    """Percent of pixels whose ceiling/wall/floor label differs."""
    a = boundary_to_segmentation(pred, H)
    b = boundary_to_segmentation(gt, H)
    if a.shape != b.shape:
        raise ValueError("targets differ in width")
    return 100.0 * float(np.mean(a != b))


def depth_metrics(pred, gt, H, W):
    """RMSE (meters) and delta_1 between rendered layout depths at canonical camera height."""
    dp = layout_to_depth(pred.normalized(CANONICAL_CAMERA_HEIGHT), H, W)
    dg = layout_to_depth(gt.normalized(CANONICAL_CAMERA_HEIGHT), H, W)
    rmse = float(np.sqrt(np.mean((dp - dg) ** 2)))
    ratio = np.maximum(dp / dg, dg / dp)
    # inclusive threshold; tiny slack so an exact 1.25 ratio survives rounding
    delta1 = float(np.mean(ratio <= DELTA1_THRESHOLD * (1 + 1e-12)))
    return rmse, delta1


def corner_bucket(n):
    return "10+" if n >= 10 else str(int(n))


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class MetricsReport:
    """Per-run metric means and their aggregate over seeds."""

    rows: list = field(default_factory=list)

    def add(self, method, labels, seed, values, bucket="all"):
        row = {"method": method, "labels": labels, "seed": seed, "bucket": bucket}
        row.update({k: float(values[k]) for k in METRIC_NAMES if k in values})
        self.rows.append(row)

    def runs(self, method, labels, bucket="all"):
        return [r for r in self.rows if r["method"] == method and r["labels"] == labels and r["bucket"] == bucket]

    def aggregate(self, method, labels, bucket="all"):
        """``{metric: (mean, std, n)}``; std is the sample standard deviation across seeds."""
        runs = self.runs(method, labels, bucket)
        out = {}
        for k in METRIC_NAMES:
            vals = np.array([r[k] for r in runs if k in r and not math.isnan(r[k])])
            if len(vals) == 0:
                continue
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            out[k] = (float(np.mean(vals)), std, len(vals))
        return out

    def groups(self):
        seen = []
        for r in self.rows:
            key = (r["method"], r["labels"], r["bucket"])
            if key not in seen:
                seen.append(key)
        return seen

    def write_csv(self, path):
        """One row per (method, labels, seed, bucket) plus a ``mean+-std`` row per group."""
        header = ["method", "labels", "seed", "bucket", *METRIC_NAMES]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.rows:
                w.writerow([r["method"], r["labels"], r["seed"], r["bucket"], *[_fmt(r.get(k)) for k in METRIC_NAMES]])
            for method, labels, bucket in self.groups():
                agg = self.aggregate(method, labels, bucket)
                w.writerow(
                    [method, labels, "mean+-std", bucket]
                    + [f"{agg[k][0]:.4f} +- {agg[k][1]:.4f}" if k in agg else "" for k in METRIC_NAMES]
                )

    def table(self, metrics=METRIC_NAMES, bucket="all"):
        """Plain-text comparison table: one block per metric, methods as rows, label counts as columns."""
        methods = list(dict.fromkeys(r["method"] for r in self.rows))
        labels = list(dict.fromkeys(r["labels"] for r in self.rows))
        lines = []
        for k in metrics:
            lines.append(f"{k}")
            lines.append("method".ljust(16) + "".join(f"{str(n) + ' labels':>22}" for n in labels))
            for m in methods:
                cells = []
                for n in labels:
                    agg = self.aggregate(m, n, bucket).get(k)
                    cells.append(f"{agg[0]:.2f} +- {agg[1]:.2f}".rjust(22) if agg else "-".rjust(22))
                lines.append(m.ljust(16) + "".join(cells))
            lines.append("")
        return "\n".join(lines)


def _fmt(v):
    return "" if v is None else f"{v:.6f}"
