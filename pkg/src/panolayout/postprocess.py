"""Boundary vectors to Manhattan 3D layouts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import peak_prominences

from .geometry import (
    CANONICAL_CAMERA_HEIGHT,
    GeometryError,
    ManhattanLayout,
    column_longitudes,
    find_peaks_circular,
    fit_manhattan_polygon,
    ray_distances,
)

MIN_FLOOR_LATITUDE = 1e-3


@dataclass(frozen=True)
class ReconstructConfig:
    peak_threshold: float = 0.5
    min_separation: int | None = None  # columns; default W // 64
    edge_margin: int = 1  # columns skipped next to each corner when fitting a wall
    min_prominence: float = 0.02  # drops ripples on the broad corner-score plateau
    h_cam: float = CANONICAL_CAMERA_HEIGHT


def circular_prominence(signal, cols):
    """Peak prominences of ``cols`` with the signal treated as periodic."""
    signal = np.asarray(signal, dtype=float)
    cols = np.asarray(cols, dtype=int)
    if len(cols) == 0:
        return np.zeros(0)
    W = len(signal)
    return peak_prominences(np.tile(signal, 3), cols + W, wlen=W + 1)[0]


def detect_corner_columns(yw, min_sep, thresh, min_prominence=0.0):
    """Corner columns from the wall-wall channel, forced to an even count >= 4.

    Peaks must clear ``thresh`` and stand out by ``min_prominence``. Falls
    back to the four strongest local maxima when fewer than four peaks
    survive; an odd count drops its weakest peak.
    """
    cols = find_peaks_circular(yw, min_sep, thresh)
    if min_prominence > 0:
        cols = cols[circular_prominence(yw, cols) >= min_prominence]
    fallback = len(cols) < 4
    if fallback:
        cols = find_peaks_circular(yw, min_sep)
        cols = np.sort(cols[np.argsort(-yw[cols], kind="stable")[:4]])
        if len(cols) < 4:
            W = len(yw)
            start = int(np.argmax(yw))
            cols = np.sort((start + np.arange(4) * (W // 4)) % W)
    if len(cols) % 2:
        cols = np.delete(cols, np.argmin(yw[cols]))
    return cols, fallback


def _wall_groups(points, cols, W, margin):
    n = len(cols)
    groups = []
    for k in range(n):
        a, b = int(cols[k]), int(cols[(k + 1) % n])
        span = (b - a) % W
        if span - 2 * margin >= 2:
            idx = (a + margin + np.arange(span - 2 * margin + 1)) % W
        else:
            idx = np.array([a, b])
        groups.append(points[idx])
    return groups


def _layout_from_columns(t, cols, cfg):
    W = t.width
    u = column_longitudes(W)
    yf = np.maximum(t.yf, MIN_FLOOR_LATITUDE)
    d = cfg.h_cam / np.tan(yf)
    points = np.stack([d * np.sin(u), d * np.cos(u)], axis=1)
    walls = _wall_groups(points, cols, W, cfg.edge_margin)
    verts, yaw = fit_manhattan_polygon(walls, reducer=np.median, max_deviation=None)
    layout = ManhattanLayout(verts, cfg.h_cam, cfg.h_cam + 1.0)
    layout.validate()
    d_fit = ray_distances(layout.floor, u)
    up = np.median(d_fit * np.tan(np.maximum(-t.yc, MIN_FLOOR_LATITUDE)))
    layout.h_ceil = cfg.h_cam + float(up)
    layout.meta = {"yaw": yaw, "corner_columns": cols}
    return layout.validate()


def reconstruct(t, cfg=ReconstructConfig()):
    """Manhattan layout from a (predicted) boundary target.

    Corners come from peaks of ``yw``; the floor boundary of every column
    between two corners gives points on one wall, and each wall's offset is the
    median of those points along its axis. Wall axes alternate and the
    Manhattan yaw is the candidate with the least fitting residual. The
    ceiling height is the median over columns of the per-column estimate.
    """
    W = t.width
    min_sep = max(1, W // 64) if cfg.min_separation is None else cfg.min_separation
    cols, fallback = detect_corner_columns(t.yw, min_sep, cfg.peak_threshold, cfg.min_prominence)
    try:
        return _layout_from_columns(t, cols, cfg)
    except GeometryError as err:
        if fallback:
            raise GeometryError(f"snapping failed for fallback corners {cols.tolist()}: {err}") from err
        first = err
    # retry with the four strongest peaks
    cols = find_peaks_circular(t.yw, min_sep)
    cols = np.sort(cols[np.argsort(-t.yw[cols], kind="stable")[:4]])
    if len(cols) < 4:
        raise GeometryError(f"snapping failed ({first}) and no 4-corner fallback exists")
    try:
        return _layout_from_columns(t, cols, cfg)
    except GeometryError as err:
        raise GeometryError(f"snapping failed for corners {cols.tolist()} ({first}); fallback: {err}") from err

