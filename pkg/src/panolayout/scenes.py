"""Procedural Manhattan rooms rendered as equirectangular panoramas."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from shapely.geometry import Point

from .geometry import (
    CornerAnnotation,
    GeometryError,
    ManhattanLayout,
    Panorama,
    column_longitudes,
    layout_to_boundary,
    row_latitudes,
)

CAMERA_HEIGHT = 1.6
CEILING_RANGE = (2.4, 3.2)
NOISE_SIGMA = 0.02
MAX_TRIES = 200


class GenerationError(RuntimeError):
    pass


@dataclass
class Scene:
    panorama: Panorama
    annotation: CornerAnnotation
    layout: ManhattanLayout

    @property
    def n_corners(self):
        return self.layout.n_corners

    def target(self):
        return layout_to_boundary(self.layout, self.panorama.width)


def _longitude_order(floor):
    """Return the polygon re-ordered by increasing longitude, or None if not radially monotone."""
    u = np.arctan2(floor[:, 0], floor[:, 1])
    for poly, lon in ((floor, u), (floor[::-1], u[::-1])):
        steps = np.diff(np.append(lon, lon[0])) % (2 * np.pi)
        if np.all(steps > 1e-9) and np.isclose(steps.sum(), 2 * np.pi):
            start = int(np.argmin(lon))
            return np.roll(poly, -start, axis=0), np.roll(steps, -start)
    return None


def _acceptable(floor, margin, min_wall, min_gap):
    layout = ManhattanLayout(floor, CAMERA_HEIGHT, CAMERA_HEIGHT + 1.0)
    try:
        layout.validate()
    except GeometryError:
        return None
    poly = layout.polygon()
    if poly.exterior.distance(Point(0.0, 0.0)) < margin:
        return None
    edges = np.roll(floor, -1, axis=0) - floor
    if np.linalg.norm(edges, axis=1).min() < min_wall:
        return None
    ordered = _longitude_order(floor)
    if ordered is None:
        return None
    poly_sorted, steps = ordered
    if steps.min() < min_gap:
        return None
    return poly_sorted


def random_floor(rng, n_corners, W=256, margin=0.5, min_wall=0.35, min_gap_cols=6):
    """Random rectilinear floor polygon, fully visible from the origin.

    Starts from an off-center rectangle and cuts rectangular notches (or adds
    bumps) at random vertices until ``n_corners`` is reached. Every candidate
    keeps the camera at least ``margin`` meters from all walls and keeps
    consecutive corners at least ``min_gap_cols`` columns apart in longitude.
    """
    if n_corners < 4 or n_corners % 2:
        raise ValueError(f"corner count must be even and >= 4, got {n_corners}")
    min_gap = 2 * np.pi * min_gap_cols / W
    for _ in range(MAX_TRIES):
        a1, a2, b1, b2 = rng.uniform(1.2, 3.6, size=4)
        floor = np.array([[-a1, -b1], [-a1, b2], [a2, b2], [a2, -b1]])
        floor = _acceptable(floor, margin, min_wall, min_gap)
        if floor is None:
            continue
        for _ in range(MAX_TRIES):
            if len(floor) >= n_corners:
                break
            k = rng.integers(len(floor))
            prev, cur, nxt = floor[k - 1], floor[k], floor[(k + 1) % len(floor)]
            f1, f2 = rng.uniform(0.15, 0.6, size=2)
            a = cur - f1 * (cur - prev)
            b = cur + f2 * (nxt - cur)
            c = a + f2 * (nxt - cur)
            cand = np.concatenate([floor[:k], [a, c, b], floor[k + 1:]])
            cand = _acceptable(cand, margin, min_wall, min_gap)
            if cand is not None:
                floor = cand
        if len(floor) == n_corners:
            return floor
    raise GenerationError(f"could not sample a visible {n_corners}-corner room")


def render_panorama(layout, H, W, rng, noise=NOISE_SIGMA):
    """Ray-cast a textured panorama of the layout.

    Walls get per-wall base colors modulated by vertical stripes; floor and
    ceiling get their own colors with distance shading. Gaussian pixel noise
    of ``noise`` is added and the result clipped to [0, 1].
    """
    floor = layout.floor
    n = len(floor)
    u = column_longitudes(W)
    v = row_latitudes(H)[:, None]
    dirs = np.stack([np.sin(u), np.cos(u)], axis=-1)[:, None, :]
    P = floor[None]
    E = (np.roll(floor, -1, axis=0) - floor)[None]
    denom = dirs[..., 0] * E[..., 1] - dirs[..., 1] * E[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (P[..., 0] * E[..., 1] - P[..., 1] * E[..., 0]) / denom
        s = (P[..., 0] * dirs[..., 1] - P[..., 1] * dirs[..., 0]) / denom
    ok = (np.abs(denom) > 1e-12) & (s >= -1e-9) & (s <= 1 + 1e-9) & (t > 0)
    t = np.where(ok, t, np.inf)
    wall_idx = np.argmin(t, axis=1)
    d = t[np.arange(W), wall_idx]
    along = s[np.arange(W), wall_idx] * np.linalg.norm(E[0, wall_idx], axis=1)

    wall_colors = rng.uniform(0.3, 0.85, size=(n, 3))
    period = rng.uniform(0.3, 0.9)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    floor_color = rng.uniform(0.12, 0.4, size=3)
    ceil_color = rng.uniform(0.8, 0.95, size=3)

    stripes = 1.0 + 0.1 * np.sin(2 * np.pi * along / period + phase[wall_idx])
    wall_rgb = (wall_colors[wall_idx] * stripes[:, None]).T[:, None, :]  # (3, 1, W)

    h_up = layout.h_ceil - layout.h_cam
    plane_h = np.where(v > 0, layout.h_cam, h_up)
    horiz = plane_h / np.tan(np.abs(v))  # horizontal reach of the floor/ceiling hit
    on_wall = horiz >= d[None, :]
    on_floor = (~on_wall) & (v > 0)
    shade = 0.75 + 0.25 * np.exp(-horiz / 3.0)

    img = np.empty((3, H, W))
    for c in range(3):
        img[c] = np.where(
            on_wall,
            wall_rgb[c],
            np.where(on_floor, floor_color[c] * shade, ceil_color[c] * shade),
        )
    img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_scene(rng, n_corners=4, H=64, W=256):
    """Random room with an exactly consistent panorama, annotation and layout."""
    floor = random_floor(rng, n_corners, W)
    h_ceil = rng.uniform(*CEILING_RANGE)
    layout = ManhattanLayout(floor, CAMERA_HEIGHT, h_ceil).validate()
    pano = Panorama(render_panorama(layout, H, W, rng))
    return Scene(pano, layout.to_annotation(), layout)

