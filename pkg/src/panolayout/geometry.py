"""Layout data model and conversions between corners, boundaries, layouts and renders.

Conventions used throughout the package:

* longitude ``u`` of column ``j`` is ``2*pi*(j + 0.5)/W - pi`` (pixel centers);
* latitude ``v`` of row ``i`` is ``pi*(i + 0.5)/H - pi/2`` and grows downward,
  so the floor boundary is positive and the ceiling boundary negative;
* a viewing direction ``(u, v)`` is the unit vector
  ``x = cos v sin u, y = sin v, z = cos v cos u`` with ``y`` pointing down;
* floor polygons live in the horizontal ``(x, z)`` plane, camera at the origin.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter1d
from shapely.geometry import Point, Polygon

CORNER_DECAY = 0.96
CANONICAL_CAMERA_HEIGHT = 1.6

CEILING, WALL, FLOOR = 0, 1, 2


class GeometryError(ValueError):
    """A polygon could not be built, snapped, or ray-cast."""


class InvalidAnnotationError(ValueError):
    pass


class DetectionError(ValueError):
    """Too few corner peaks were found in a wall-wall channel."""


# ---------------------------------------------------------------------------
# pixel <-> angle conventions


def _check_index(idx, size, name):
    arr = np.asarray(idx)
    if np.any(arr < 0) or np.any(arr >= size):
        raise IndexError(f"{name} index out of range [0, {size})")


def col_to_longitude(j, W):
    _check_index(j, W, "column")
    return 2.0 * np.pi * (np.asarray(j, dtype=float) + 0.5) / W - np.pi


def row_to_latitude(i, H):
    _check_index(i, H, "row")
    return np.pi * (np.asarray(i, dtype=float) + 0.5) / H - np.pi / 2


def longitude_to_col(u, W):
    """Fractional column coordinate of longitude ``u`` (inverse of col_to_longitude)."""
    return (np.asarray(u, dtype=float) + np.pi) * W / (2.0 * np.pi) - 0.5


def latitude_to_row(v, H):
    return (np.asarray(v, dtype=float) + np.pi / 2) * H / np.pi - 0.5


def wrap_angle(u):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(u, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


def nearest_col(u, W):
    return np.rint(longitude_to_col(wrap_angle(u), W)).astype(int) % W


def column_longitudes(W):
    return col_to_longitude(np.arange(W), W)


def row_latitudes(H):
    return row_to_latitude(np.arange(H), H)


def yaw_points(points, delta):
    """Rotate (x, z) points so that every longitude grows by ``delta``."""
    c, s = np.cos(delta), np.sin(delta)
    p = np.asarray(points, dtype=float)
    return np.stack([p[..., 0] * c + p[..., 1] * s, -p[..., 0] * s + p[..., 1] * c], axis=-1)


# ---------------------------------------------------------------------------
# data model


@dataclass
class Panorama:
    """Equirectangular RGB image stored as a ``(3, H, W)`` float array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) pixels, got {self.pixels.shape}")
        # full-scale panoramas are 2:1; the desk default 64 x 256 is not, so
        # only the per-axis angular conventions are enforced
        if self.pixels.shape[1] % 2 or self.pixels.shape[2] % 2:
            raise ValueError("panorama height and width must be even")

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    def save_png(self, path):
        from PIL import Image

        img = np.clip(np.rint(self.pixels.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(img, mode="RGB").save(path)

    @classmethod
    def load_png(cls, path):
        from PIL import Image

        img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        return cls(img.transpose(2, 0, 1))


@dataclass
class BoundaryTarget:
    """Per-column ceiling boundary, floor boundary (radians) and corner score."""

    yc: np.ndarray
    yf: np.ndarray
    yw: np.ndarray
    # exact corner longitudes when known (ground truth); lets geometric
    # augmentations regenerate ``yw`` without column quantization
    corners: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.yc = np.asarray(self.yc, dtype=float)
        self.yf = np.asarray(self.yf, dtype=float)
        self.yw = np.asarray(self.yw, dtype=float)
        if self.corners is not None:
            self.corners = np.sort(wrap_angle(self.corners))
        if not (self.yc.shape == self.yf.shape == self.yw.shape) or self.yc.ndim != 1:
            raise ValueError("boundary channels must be 1-D arrays of equal length")

    @property
    def width(self):
        return self.yc.shape[0]

    def as_array(self):
        return np.stack([self.yc, self.yf, self.yw])

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(arr[0], arr[1], arr[2])

    def is_valid(self):
        return bool(
            np.all(self.yc >= -np.pi / 2)
            and np.all(self.yc < 0)
            and np.all(self.yf > 0)
            and np.all(self.yf <= np.pi / 2)
            and np.all((self.yw >= 0) & (self.yw <= 1))
        )


@dataclass
class CornerAnnotation:
    """Wall-wall corners ordered by increasing longitude."""

    u: np.ndarray
    vc: np.ndarray
    vf: np.ndarray
    h_cam: float = CANONICAL_CAMERA_HEIGHT

    def __post_init__(self):
        self.u = np.atleast_1d(np.asarray(self.u, dtype=float))
        self.vc = np.atleast_1d(np.asarray(self.vc, dtype=float))
        self.vf = np.atleast_1d(np.asarray(self.vf, dtype=float))

    def __len__(self):
        return len(self.u)

    def validate(self):
        n = len(self.u)
        if n < 4 or n % 2:
            raise InvalidAnnotationError(f"need an even number (>= 4) of corners, got {n}")
        if np.any(self.vf <= 0):
            raise InvalidAnnotationError("floor latitude must be positive")
        if np.any(self.vc >= 0):
            raise InvalidAnnotationError("ceiling latitude must be negative")
        # strictly increasing up to one wrap-around
        steps = np.diff(np.append(self.u, self.u[0])) % (2 * np.pi)
        if np.any(steps <= 0) or not np.isclose(steps.sum(), 2 * np.pi):
            raise InvalidAnnotationError("corner longitudes are not cyclically increasing")

    def pixel_points(self, H, W):
        """Ceiling and floor corner positions as ``(2N, 2)`` pixel coordinates ``(j, i)``."""
        j = longitude_to_col(self.u, W)
        return np.concatenate(
            [np.stack([j, latitude_to_row(self.vc, H)], 1), np.stack([j, latitude_to_row(self.vf, H)], 1)]
        )

    def to_json(self):
        return {
            "corners": [{"u": float(a), "vc": float(b), "vf": float(c)} for a, b, c in zip(self.u, self.vc, self.vf)],
            "h_cam": float(self.h_cam),
        }

    @classmethod
    def from_json(cls, doc):
        corners = doc["corners"]
        return cls(
            [c["u"] for c in corners],
            [c["vc"] for c in corners],
            [c["vf"] for c in corners],
            float(doc.get("h_cam", CANONICAL_CAMERA_HEIGHT)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ManhattanLayout:
    """Rectilinear floor polygon (x, z in meters) with camera and ceiling heights."""

    floor: np.ndarray
    h_cam: float = CANONICAL_CAMERA_HEIGHT
    h_ceil: float = 2.8
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.floor = np.asarray(self.floor, dtype=float).reshape(-1, 2)

    @property
    def n_corners(self):
        return len(self.floor)

    @property
    def wall_height(self):
        return self.h_ceil

    def polygon(self):
        return Polygon(self.floor)

    def validate(self, tol=1e-6):
        if self.h_cam <= 0:
            raise GeometryError("camera height must be positive")
        if self.h_ceil <= self.h_cam:
            raise GeometryError("ceiling must be above the camera")
        n = len(self.floor)
        if n < 4 or n % 2:
            raise GeometryError(f"rectilinear polygon needs an even vertex count >= 4, got {n}")
        poly = self.polygon()
        if not poly.is_valid or poly.area <= 0:
            raise GeometryError("floor polygon is not simple")
        if not poly.contains(Point(0.0, 0.0)):
            raise GeometryError("camera is not strictly inside the floor polygon")
        edges = np.roll(self.floor, -1, axis=0) - self.floor
        lengths = np.linalg.norm(edges, axis=1)
        if np.any(lengths <= tol):
            raise GeometryError("degenerate zero-length wall")
        unit = edges / lengths[:, None]
        dots = np.abs(np.sum(unit * np.roll(unit, -1, axis=0), axis=1))
        if np.any(dots > 1e-6):
            raise GeometryError("consecutive walls are not perpendicular")
        return self

    def scaled(self, s):
        return ManhattanLayout(self.floor * s, self.h_cam * s, self.h_ceil * s)

    def yawed(self, delta):
        """Rotate about the vertical axis so that longitudes grow by ``delta``."""
        return ManhattanLayout(yaw_points(self.floor, delta), self.h_cam, self.h_ceil)

    def mirrored(self):
        """Mirror x -> -x (left-right flip); vertex order reversed to keep longitudes increasing."""
        floor = self.floor * np.array([-1.0, 1.0])
        return ManhattanLayout(floor[::-1].copy(), self.h_cam, self.h_ceil)

    def stretched(self, kx, kz):
        return ManhattanLayout(self.floor * np.array([kx, kz]), self.h_cam, self.h_ceil)

    def normalized(self, h_cam=CANONICAL_CAMERA_HEIGHT):
        return self.scaled(h_cam / self.h_cam)

    def to_annotation(self):
        """Corner annotation of the polygon vertices, sorted by longitude."""
        x, z = self.floor[:, 0], self.floor[:, 1]
        u = np.arctan2(x, z)
        d = np.hypot(x, z)
        order = np.argsort(wrap_angle(u))
        d = d[order]
        return CornerAnnotation(
            wrap_angle(u[order]),
            -np.arctan((self.h_ceil - self.h_cam) / d),
            np.arctan(self.h_cam / d),
            self.h_cam,
        )


# ---------------------------------------------------------------------------
# Manhattan polygon fitting


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _fit_walls(walls, yaw, parity, reducer):
    c, s = np.cos(-yaw), np.sin(-yaw)
    coords = []
    resid = 0.0
    for k, pts in enumerate(walls):
        # rotate into the candidate Manhattan frame
        a = pts[:, 0] * c + pts[:, 1] * s
        b = -pts[:, 0] * s + pts[:, 1] * c
        vals = a if (k + parity) % 2 == 0 else b
        value = reducer(vals)
        coords.append(value)
        resid += float(np.sum((vals - value) ** 2))
    return np.array(coords), resid


def fit_manhattan_polygon(walls, yaw=None, reducer=np.mean, max_deviation=np.deg2rad(30.0)):
    """Fit alternating axis-aligned walls to groups of floor points.

    ``walls[k]`` holds points measured on the wall running from corner ``k`` to
    corner ``k + 1``. Each wall gets one shared coordinate (its ``reducer`` over
    the points); vertex ``k`` is the intersection of walls ``k - 1`` and ``k``.
    When ``yaw`` is None the Manhattan frame is chosen among 0 and the wall
    directions by least residual. Returns ``(vertices, yaw)``.
    """
    walls = [np.asarray(w, dtype=float).reshape(-1, 2) for w in walls]
    n = len(walls)
    if n < 4 or n % 2:
        raise GeometryError(f"need an even number (>= 4) of walls, got {n}")
    if yaw is None:
        candidates = [0.0]
        for w in walls:
            e = w[-1] - w[0]
            if np.hypot(*e) > 1e-9:
                candidates.append(float(np.arctan2(e[0], e[1]) % (np.pi / 2)))
    else:
        candidates = [float(yaw)]
    best = None
    for cand in candidates:
        for parity in (0, 1):
            coords, resid = _fit_walls(walls, cand, parity, reducer)
            if best is None or resid < best[0] - 1e-12:
                best = (resid, cand, parity, coords)
    _, yaw, parity, coords = best

    if max_deviation is not None:
        c, s = np.cos(-yaw), np.sin(-yaw)
        for k, w in enumerate(walls):
            e = w[-1] - w[0]
            if np.hypot(*e) < 1e-9:
                continue
            a, b = e[0] * c + e[1] * s, -e[0] * s + e[1] * c
            # constant-a walls run along b and vice versa
            along, across = (b, a) if (k + parity) % 2 == 0 else (a, b)
            if np.arctan2(abs(across), abs(along)) > max_deviation:
                raise GeometryError(f"wall {k} does not follow the alternating Manhattan axes")

    verts = np.empty((n, 2))
    for k in range(n):
        prev = coords[k - 1]
        if (k + parity) % 2 == 0:
            verts[k] = (coords[k], prev)
        else:
            verts[k] = (prev, coords[k])
    return yaw_points(verts, yaw), yaw


def corners_to_layout(ann, h_cam=None):
    """Manhattan layout from a corner annotation, snapped to alternating axes."""
    h_cam = ann.h_cam if h_cam is None else float(h_cam)
    if np.any(ann.vf <= 0):
        raise InvalidAnnotationError("floor latitude must be positive")
    n = len(ann)
    if n < 4 or n % 2:
        raise GeometryError(f"need an even number (>= 4) of corners, got {n}")
    d = h_cam / np.tan(ann.vf)
    pts = np.stack([d * np.sin(ann.u), d * np.cos(ann.u)], axis=1)
    walls = [pts[[k, (k + 1) % n]] for k in range(n)]
    verts, _ = fit_manhattan_polygon(walls)
    h_ceil = h_cam + float(np.mean(d * np.tan(-ann.vc)))
    layout = ManhattanLayout(verts, h_cam, h_ceil)
    layout.validate()
    return layout


# ---------------------------------------------------------------------------
# rendering


def ray_distances(floor, u):
    """Horizontal distance from the origin to the first wall along longitudes ``u``."""
    floor = np.asarray(floor, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    dirs = np.stack([np.sin(u), np.cos(u)], axis=-1)[:, None, :]
    P = floor[None, :, :]
    E = (np.roll(floor, -1, axis=0) - floor)[None, :, :]
    denom = _cross(dirs, E)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(P, E) / denom
        s = _cross(P, dirs) / denom
    ok = (np.abs(denom) > 1e-12) & (s >= -1e-9) & (s <= 1 + 1e-9) & (t > 1e-12)
    t = np.where(ok, t, np.inf)
    d = t.min(axis=1)
    if not np.all(np.isfinite(d)):
        raise GeometryError("ray escapes the floor polygon; camera outside the room")
    return d


def corners_to_wall_channel(ann, W, decay=CORNER_DECAY):
    """Corner score ``decay ** (circular column distance to the nearest corner)``."""
    u = ann.u if isinstance(ann, CornerAnnotation) else np.asarray(ann, dtype=float)
    cols = nearest_col(u, W)
    j = np.arange(W)
    diff = np.abs(j[:, None] - cols[None, :])
    dist = np.minimum(diff, W - diff).min(axis=1)
    return decay ** dist.astype(float)


def layout_to_boundary(layout, W):
    u = column_longitudes(W)
    d = ray_distances(layout.floor, u)
    yf = np.arctan(layout.h_cam / d)
    yc = -np.arctan((layout.h_ceil - layout.h_cam) / d)
    corner_u = np.arctan2(layout.floor[:, 0], layout.floor[:, 1])
    return BoundaryTarget(yc, yf, corners_to_wall_channel(corner_u, W), corners=corner_u)


def boundary_to_corners(t, min_sep=None, thresh=0.5, h_cam=CANONICAL_CAMERA_HEIGHT):
    """Corner annotation from local maxima of the corner channel.

    A column is a peak when it is the maximum of its circular ``+-min_sep``
    window and scores at least ``thresh``; peaks are then suppressed greedily
    by score so that survivors are at least ``min_sep`` columns apart.
    """
    W = t.width
    min_sep = max(1, W // 64) if min_sep is None else int(min_sep)
    cols = find_peaks_circular(t.yw, min_sep, thresh)
    if len(cols) < 4:
        raise DetectionError(f"found {len(cols)} corner peaks above {thresh}, need at least 4")
    u = col_to_longitude(cols, W)
    return CornerAnnotation(u, t.yc[cols], t.yf[cols], h_cam)


def find_peaks_circular(signal, min_sep, thresh=-np.inf):
    signal = np.asarray(signal, dtype=float)
    W = len(signal)
    local_max = maximum_filter1d(signal, size=2 * min_sep + 1, mode="wrap")
    cand = np.flatnonzero((signal >= local_max) & (signal >= thresh))
    order = cand[np.argsort(-signal[cand], kind="stable")]
    kept = []
    for j in order:
        if all(min(abs(j - k), W - abs(j - k)) >= min_sep for k in kept):
            kept.append(int(j))
    return np.array(sorted(kept), dtype=int)


def layout_to_depth(layout, H, W):
    """Euclidean ray depth to the first layout surface for every pixel."""
    d = ray_distances(layout.floor, column_longitudes(W))[None, :]
    v = row_latitudes(H)[:, None]
    wall = d / np.cos(v)
    plane_h = np.where(v > 0, layout.h_cam, layout.h_ceil - layout.h_cam)
    plane = plane_h / np.abs(np.sin(v))
    return np.minimum(wall, plane)


def boundary_to_segmentation(t, H):
    """Per-pixel classes (CEILING, WALL, FLOOR) with shape ``(H, W)``."""
    lat = row_latitudes(H)[:, None]
    seg = np.full((H, t.width), WALL, dtype=np.int8)
    seg[lat < t.yc[None, :]] = CEILING
    seg[lat > t.yf[None, :]] = FLOOR
    return seg
