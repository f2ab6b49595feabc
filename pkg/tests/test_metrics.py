import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panolayout.geometry import BoundaryTarget, GeometryError, ManhattanLayout
from panolayout.metrics import MetricsReport, corner_bucket, corner_error, depth_metrics, iou2d, iou3d, pixel_error


def box(x0, x1, z0, z1, h_cam=1.6, h_ceil=2.6):
    return ManhattanLayout(np.array([[x0, z0], [x0, z1], [x1, z1], [x1, z0]], dtype=float), h_cam, h_ceil)


def test_identical_layouts():
    a = box(-1, 2, -1, 1)
    assert iou3d(a, a) == pytest.approx(100.0)
    assert iou2d(a, a) == pytest.approx(100.0)
    rmse, d1 = depth_metrics(a, a, 16, 32)
    assert rmse == 0.0 and d1 == 1.0


def test_disjoint_layouts():
    a, b = box(-1, 1, -1, 1), box(5, 6, 5, 6)
    assert iou2d(a, b) == 0.0
    assert iou3d(a, b) == 0.0


def test_half_overlapping_cubes():
    # unit-height rooms at camera height 1.6 after normalization
    a = box(0, 1, 0, 1, h_cam=1.6, h_ceil=1.0 + 1.6)
    a = ManhattanLayout(a.floor, 1.6, 1.0)
    b = ManhattanLayout(a.floor + np.array([0.5, 0.0]), 1.6, 1.0)
    assert iou3d(a, b) == pytest.approx(100 / 3, abs=1e-9)


def test_iou2d_examples():
    a = box(0, 2, 0, 2)
    assert iou2d(a, box(1, 3, 0, 2)) == pytest.approx(100 / 3, abs=1e-9)
    assert iou2d(a, box(0, 1, 0, 1)) == pytest.approx(25.0, abs=1e-9)


def test_equal_heights_make_3d_equal_2d():
    a, b = box(-1, 1, -1, 2), box(-0.5, 1.5, -1, 1)
    assert iou3d(a, b) == pytest.approx(iou2d(a, b), abs=1e-9)


def test_degenerate_polygon():
    flat = ManhattanLayout(np.array([[0, 0], [0, 1], [0, 1], [0, 0.0]]), 1.6, 2.6)
    with pytest.raises(GeometryError):
        iou2d(flat, box(0, 1, 0, 1))


def test_corner_error_examples():
    H, W = 512, 1024
    gt = np.column_stack([np.linspace(50, 950, 8), np.full(8, 200.0)])
    assert corner_error(gt, gt, H, W) == 0.0
    pred = gt.copy()
    pred[3] += (3, 4)
    assert corner_error(pred, gt, H, W) == pytest.approx(100 * (5 / 8) / math.hypot(H, W), abs=1e-9)
    assert corner_error(pred, gt, H, W) == pytest.approx(0.0546, abs=1e-4)
    assert corner_error(gt[:7], gt, H, W) == pytest.approx(12.5, abs=1e-9)
    assert math.isnan(corner_error(gt, gt[:0], H, W))


def test_corner_error_wraps_seam():
    gt = np.array([[1.0, 10.0]])
    pred = np.array([[63.0, 10.0]])
    assert corner_error(pred, gt, 32, 64) == pytest.approx(100 * 2 / math.hypot(32, 64))


def test_pixel_error_examples():
    H, W = 64, 32
    row = math.pi / H
    yc = np.full(W, -0.3)
    yf = np.full(W, 10.25 * row)
    a = BoundaryTarget(yc, yf, np.zeros(W))
    assert pixel_error(a, a, H) == 0.0
    b = BoundaryTarget(yc, yf + row, np.zeros(W))
    assert pixel_error(a, b, H) == pytest.approx(100 / 64, abs=1e-9)
    c = BoundaryTarget(np.full(W, 1.5), np.full(W, 1.5), np.zeros(W))
    d = BoundaryTarget(np.full(W, -1.5), np.full(W, -1.5), np.zeros(W))
    assert pixel_error(c, d, H) > 95.0


def test_depth_metric_threshold_inclusive(monkeypatch):
    import panolayout.metrics as m

    base = np.full((4, 8), 2.0)
    monkeypatch.setattr(m, "layout_to_depth", lambda L, H, W: base * L.h_ceil)
    a = ManhattanLayout(np.zeros((4, 2)), 1.6, 1.0)
    b = ManhattanLayout(np.zeros((4, 2)), 1.6, 1.25)
    c = ManhattanLayout(np.zeros((4, 2)), 1.6, 2.0)
    assert m.depth_metrics(a, b, 4, 8)[1] == 1.0
    assert m.depth_metrics(a, c, 4, 8)[1] == 0.0
    assert m.depth_metrics(a, c, 4, 8)[0] == pytest.approx(2.0)


def test_symmetry():
    a, b = box(-1, 2, -1, 1, h_ceil=2.9), box(-0.5, 1.5, -2, 1, h_ceil=2.5)
    assert iou3d(a, b) == pytest.approx(iou3d(b, a))
    assert iou2d(a, b) == pytest.approx(iou2d(b, a))
    assert depth_metrics(a, b, 16, 32) == pytest.approx(depth_metrics(b, a, 16, 32))


def test_yaw_invariance():
    a, b = box(-1, 2, -1, 1, h_ceil=2.9), box(-0.5, 1.5, -2, 1, h_ceil=2.5)
    for yaw in (0.3, 1.2, -2.0):
        assert iou3d(a.yawed(yaw), b.yawed(yaw)) == pytest.approx(iou3d(a, b), abs=1e-9)
        assert iou2d(a.yawed(yaw), b.yawed(yaw)) == pytest.approx(iou2d(a, b), abs=1e-9)


def raster_iou(a, b, n=(32, 64)):
    """Pixel-counting IoU on an ``n`` grid spanning both floor plans."""
    from shapely import contains_xy

    pts = np.vstack([a.floor, b.floor])
    (x0, z0), (x1, z1) = pts.min(0), pts.max(0)
    zs = z0 + (np.arange(n[0]) + 0.5) / n[0] * (z1 - z0)
    xs = x0 + (np.arange(n[1]) + 0.5) / n[1] * (x1 - x0)
    X, Z = np.meshgrid(xs, zs)
    ma = contains_xy(a.polygon(), X, Z)
    mb = contains_xy(b.polygon(), X, Z)
    return 100.0 * np.sum(ma & mb) / max(np.sum(ma | mb), 1)


def random_room(rng):
    from panolayout.scenes import random_floor

    return ManhattanLayout(random_floor(rng, int(rng.choice([4, 6, 8]))), 1.6, 2.8)


def room_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        a, b = random_room(rng), random_room(rng)
        yield a, ManhattanLayout(b.floor + rng.uniform(-1, 1, 2), 1.6, 2.8)


def test_raster_cross_check_coarse_grid():
    # single pairs can miss by ~2 points from cell quantization alone; the
    # average over random pairs stays well inside 1.5
    diffs = np.array([abs(iou2d(a, b) - raster_iou(a, b)) for a, b in room_pairs(200)])
    assert diffs.mean() <= 1.5
    assert np.median(diffs) <= 1.5


def test_raster_converges_on_fine_grid():
    for a, b in room_pairs(20, seed=1):
        assert abs(iou2d(a, b) - raster_iou(a, b, (512, 1024))) <= 0.3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_iou_bounds(seed):
    a, b = next(room_pairs(1, seed))
    v2, v3 = iou2d(a, b), iou3d(a, b)
    assert 0.0 <= v2 <= 100.0 and 0.0 <= v3 <= 100.0


def test_report_aggregation(tmp_path):
    r = MetricsReport()
    vals = [70.0, 72.0, 74.0, 76.0]
    for seed, v in enumerate(vals):
        r.add("mean_teacher", 25, seed, {"iou3d": v, "corner_error": 10 - seed})
    agg = r.aggregate("mean_teacher", 25)
    assert agg["iou3d"][0] == pytest.approx(np.mean(vals))
    assert agg["iou3d"][1] == pytest.approx(np.std(vals, ddof=1))
    assert agg["iou3d"][2] == 4
    path = tmp_path / "r.csv"
    r.write_csv(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + 4 + 1 and "mean+-std" in lines[-1]


def test_identical_seeds_zero_std():
    r = MetricsReport()
    for seed in range(4):
        r.add("supervised", 25, seed, {"iou3d": 80.0})
    assert r.aggregate("supervised", 25)["iou3d"][1] == 0.0


def test_corner_buckets():
    assert [corner_bucket(n) for n in (4, 6, 8, 10, 12, 22)] == ["4", "6", "8", "10+", "10+", "10+"]
