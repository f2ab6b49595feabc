"""Turn per-column predictions into layouts and score them against ground truth."""
from __future__ import annotations

import numpy as np

from .geometry import (
    BoundaryTarget,
    CornerAnnotation,
    GeometryError,
    ManhattanLayout,
    col_to_longitude,
    layout_to_boundary,
)
from .metrics import METRIC_NAMES, corner_bucket, corner_error, depth_metrics, iou2d, iou3d, pixel_error
from .postprocess import ReconstructConfig, detect_corner_columns, reconstruct

# layout scored when reconstruction fails: an uninformed 4 x 4 m box
FALLBACK_LAYOUT = ManhattanLayout(np.array([[-2.0, -2.0], [-2.0, 2.0], [2.0, 2.0], [2.0, -2.0]]), 1.6, 2.8)


def score_prediction(pred, gt_layout, gt_annotation, H, cfg=ReconstructConfig()):
    """All six metrics for one predicted ``(3, W)`` boundary array."""
    t = pred if isinstance(pred, BoundaryTarget) else BoundaryTarget.from_array(pred)
    W = t.width
    failed = False
    try:
        layout = reconstruct(t, cfg)
        pred_corners = layout.to_annotation()
        pred_target = layout_to_boundary(layout, W)
    except GeometryError:
        failed = True
        layout = FALLBACK_LAYOUT
        min_sep = max(1, W // 64) if cfg.min_separation is None else cfg.min_separation
        cols, _ = detect_corner_columns(t.yw, min_sep, cfg.peak_threshold, cfg.min_prominence)
        pred_corners = CornerAnnotation(col_to_longitude(cols, W), t.yc[cols], t.yf[cols])
        pred_target = t
    gt_target = layout_to_boundary(gt_layout, W)
    rmse, delta1 = depth_metrics(layout, gt_layout, H, W)
    return {
        "iou3d": 0.0 if failed else iou3d(layout, gt_layout),
        "iou2d": 0.0 if failed else iou2d(layout, gt_layout),
        "corner_error": corner_error(pred_corners, gt_annotation, H, W),
        "pixel_error": pixel_error(pred_target, gt_target, H),
        "rmse": rmse,
        "delta1": delta1,
        "failed": failed,
    }


def summarize(scores, n_corners=None):
    """Mean of each metric overall and per corner-count bucket ``{4, 6, 8, 10+}``."""
    out = {"all": {k: float(np.mean([s[k] for s in scores])) for k in METRIC_NAMES}}
    out["all"]["failures"] = int(sum(s["failed"] for s in scores))
    if n_corners is not None:
        buckets = {}
        for s, n in zip(scores, n_corners):
            buckets.setdefault(corner_bucket(n), []).append(s)
        for b, group in sorted(buckets.items()):
            out[b] = {k: float(np.mean([s[k] for s in group])) for k in METRIC_NAMES}
    return out


def evaluate_predictions(preds, layouts, annotations, H, cfg=ReconstructConfig()):
    scores = [score_prediction(p, L, a, H, cfg) for p, L, a in zip(preds, layouts, annotations)]
    return summarize(scores, [L.n_corners for L in layouts])
