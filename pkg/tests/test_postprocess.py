import numpy as np
import pytest

from panolayout.augment import rotate
from panolayout.geometry import BoundaryTarget, GeometryError, layout_to_boundary
from panolayout.metrics import iou3d
from panolayout.postprocess import ReconstructConfig, circular_prominence, detect_corner_columns, reconstruct
from panolayout.scenes import generate_scene


def vertex_error(a, b):
    """Largest distance from a vertex of ``a`` to the nearest vertex of ``b``."""
    d = np.linalg.norm(a.floor[:, None] - b.floor[None], axis=-1)
    return d.min(axis=1).max()


def test_cuboid_round_trip():
    s = generate_scene(np.random.default_rng(0), 4)
    rec = reconstruct(s.target())
    assert iou3d(rec, s.layout) > 99.0


def test_synthetic_round_trip_vertices(scenes):
    for s in scenes:
        rec = reconstruct(s.target())
        assert rec.n_corners == s.n_corners
        diameter = np.ptp(s.layout.floor, axis=0).max()
        assert vertex_error(rec, s.layout) < 0.02 * diameter


def test_noise_corner_channel_falls_back():
    s = generate_scene(np.random.default_rng(1), 6)
    t = s.target()
    noisy = BoundaryTarget(t.yc, t.yf, np.random.default_rng(2).uniform(0.0, 0.4, t.width))
    rec = reconstruct(noisy)
    assert rec.n_corners == 4
    rec.validate()


def test_rotation_equivariance(scenes):
    W = 256
    for s in scenes[:4]:
        _, t2 = rotate(np.zeros((3, 2, W)), s.target(), 90.0)
        a = reconstruct(s.target())
        b = reconstruct(t2)
        expected = a.yawed(2 * np.pi * 64 / W)
        assert iou3d(b, expected) > 98.0


def test_outputs_are_valid_or_raise():
    rng = np.random.default_rng(3)
    W = 128
    for _ in range(30):
        t = BoundaryTarget(-rng.uniform(0.1, 1.2, W), rng.uniform(0.1, 1.2, W), rng.uniform(0, 1, W))
        try:
            rec = reconstruct(t)
        except GeometryError:
            continue
        rec.validate()


def test_odd_peak_count_drops_weakest():
    yw = np.zeros(64)
    yw[[5, 20, 35, 50, 58]] = [1.0, 0.9, 0.95, 0.8, 0.6]
    cols, fallback = detect_corner_columns(yw, 2, 0.5)
    assert cols.tolist() == [5, 20, 35, 50] and not fallback


def test_circular_prominence_wraps():
    yw = np.full(32, 0.2)
    yw[0] = 1.0
    yw[16] = 0.25
    p = circular_prominence(yw, np.array([0, 16]))
    assert p[0] == pytest.approx(0.8) and p[1] == pytest.approx(0.05)


def test_prominence_filters_plateau_ripples():
    t = generate_scene(np.random.default_rng(4), 4).target()
    yw = t.yw.copy()
    ripple = np.argmin(yw)
    yw[ripple] += 0.015
    yw[(ripple + 1) % len(yw)] -= 0.01
    cols, _ = detect_corner_columns(yw, 4, -np.inf, ReconstructConfig().min_prominence)
    assert len(cols) == 4
