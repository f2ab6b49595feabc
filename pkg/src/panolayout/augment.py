"""Panorama augmentations with exact co-transforms of the boundary target.

Every geometric augmentation has a 3D counterpart on the layout:

    rotate(r)        <->  ManhattanLayout.yawed(2*pi*shift/W)
    flip()           <->  ManhattanLayout.mirrored()
    stretch(kx, kz)  <->  ManhattanLayout.stretched(kx, kz)

Functions take and return either ``Panorama`` objects or raw ``(3, H, W)``
arrays, whichever they are given. Targets are optional everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    BoundaryTarget,
    Panorama,
    column_longitudes,
    corners_to_wall_channel,
    find_peaks_circular,
    latitude_to_row,
    longitude_to_col,
    row_latitudes,
)


@dataclass(frozen=True)
class AugmentationConfig:
    stretch_range: tuple = (0.5, 1.5)
    rotation_range: tuple = (0.0, 360.0)  # (low, high]
    flip_prob: float = 0.5
    gamma_range: tuple = (0.5, 2.0)
    stretch: bool = True
    rotate: bool = True
    flip: bool = True


@dataclass(frozen=True)
class GeometricDraw:
    kx: float = 1.0
    kz: float = 1.0
    degrees: float = 360.0
    flip: bool = False


def _pixels(p):
    return (p.pixels, True) if isinstance(p, Panorama) else (np.asarray(p), False)


def _wrap(pix, as_pano):
    return Panorama(pix) if as_pano else pix


def _corner_cols(t):
    # fall back to peaks of yw when exact corner longitudes are not attached
    if t.corners is not None:
        return None
    exact = np.flatnonzero(t.yw >= 1.0 - 1e-9)
    if len(exact):
        return exact
    return find_peaks_circular(t.yw, max(1, t.width // 64), 0.5)


# ---------------------------------------------------------------------------
# individual transforms


def rotate(p, t=None, degrees=0.0):
    """Horizontal rotation as a whole-column circular shift of ``round(r*W/360)``."""
    pix, as_pano = _pixels(p)
    W = pix.shape[-1]
    shift = int(round(degrees * W / 360.0)) % W
    out = np.roll(pix, shift, axis=-1)
    if t is None:
        return _wrap(out, as_pano), None
    corners = None
    if t.corners is not None:
        corners = t.corners + 2 * np.pi * shift / W
    tt = BoundaryTarget(np.roll(t.yc, shift), np.roll(t.yf, shift), np.roll(t.yw, shift), corners=corners)
    return _wrap(out, as_pano), tt


def flip(p, t=None):
    pix, as_pano = _pixels(p)
    out = pix[..., ::-1].copy()
    if t is None:
        return _wrap(out, as_pano), None
    corners = None if t.corners is None else -t.corners
    tt = BoundaryTarget(t.yc[::-1].copy(), t.yf[::-1].copy(), t.yw[::-1].copy(), corners=corners)
    return _wrap(out, as_pano), tt


def gamma(p, g):
    if g <= 0:
        raise ValueError(f"gamma exponent must be positive, got {g}")
    pix, as_pano = _pixels(p)
    return _wrap(np.power(pix, g), as_pano)


def stretch_direction(u, v, kx, kz):
    """Direction of a scene point seen at ``(u, v)`` after scaling x by kx and z by kz."""
    su, cu = np.sin(u), np.cos(u)
    u2 = np.arctan2(kx * su, kz * cu)
    scale = np.sqrt((kx * su) ** 2 + (kz * cu) ** 2)
    v2 = np.arctan(np.tan(v) / scale)
    return u2, v2


def stretch_longitude(u, kx, kz):
    return np.arctan2(kx * np.sin(u), kz * np.cos(u))


def bilinear_wrap(img, rows, cols):
    """Sample ``(C, H, W)`` at fractional pixel coordinates; wrap columns, clamp rows."""
    C, H, W = img.shape
    rows = np.clip(rows, 0.0, H - 1.0)
    r0 = np.floor(rows).astype(int)
    r1 = np.minimum(r0 + 1, H - 1)
    fr = rows - r0
    c0f = np.floor(cols)
    fc = cols - c0f
    c0 = c0f.astype(int) % W
    c1 = (c0 + 1) % W
    top = img[:, r0, c0] * (1 - fc) + img[:, r0, c1] * fc
    bot = img[:, r1, c0] * (1 - fc) + img[:, r1, c1] * fc
    return top * (1 - fr) + bot * fr


def _interp_periodic(values, cols):
    W = len(values)
    c0f = np.floor(cols)
    f = cols - c0f
    c0 = c0f.astype(int) % W
    return values[c0] * (1 - f) + values[(c0 + 1) % W] * f


def stretch(p, t=None, kx=1.0, kz=1.0):
    """Pano stretch: scale the scene by (kx, kz) along the horizontal axes and re-project.

    Pixels are resampled through the inverse direction map, which is exact for
    layout surfaces and the usual approximation for everything else.
    """
    if kx <= 0 or kz <= 0:
        raise ValueError(f"stretch factors must be positive, got ({kx}, {kz})")
    pix, as_pano = _pixels(p)
    if kx == 1.0 and kz == 1.0:
        return _wrap(pix.copy(), as_pano), t
    _, H, W = pix.shape
    u_out = column_longitudes(W)
    v_out = row_latitudes(H)
    u_src, v_src = stretch_direction(u_out[None, :], v_out[:, None], 1.0 / kx, 1.0 / kz)
    u_src = np.broadcast_to(u_src, (H, W))
    out = bilinear_wrap(pix, latitude_to_row(v_src, H), longitude_to_col(u_src, W))
    if t is None:
        return _wrap(out, as_pano), None

    u_col = stretch_longitude(u_out, 1.0 / kx, 1.0 / kz)
    src_cols = longitude_to_col(u_col, W)
    scale = np.sqrt((kx * np.sin(u_col)) ** 2 + (kz * np.cos(u_col)) ** 2)
    yc = np.arctan(np.tan(_interp_periodic(t.yc, src_cols)) / scale)
    yf = np.arctan(np.tan(_interp_periodic(t.yf, src_cols)) / scale)
    if t.corners is not None:
        corners = stretch_longitude(t.corners, kx, kz)
    else:
        cols = _corner_cols(t)
        corners = stretch_longitude(column_longitudes(W)[cols], kx, kz)
    yw = corners_to_wall_channel(corners, W)
    return _wrap(out, as_pano), BoundaryTarget(yc, yf, yw, corners=corners if t.corners is not None else None)


# ---------------------------------------------------------------------------
# random pipelines


def item_rng(seed, *keys):
    """Independent generator for one item; stable regardless of worker count."""
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def sample_geometric(rng, cfg=AugmentationConfig()):
    lo, hi = cfg.stretch_range
    kx, kz = (rng.uniform(lo, hi, size=2) if cfg.stretch else (1.0, 1.0))
    if cfg.rotate:
        lo, hi = cfg.rotation_range
        # (lo, hi]: reflect the half-open numpy draw
        degrees = hi - rng.uniform(0.0, hi - lo)
    else:
        degrees = 360.0
    flipped = bool(rng.random() < cfg.flip_prob) if cfg.flip else False
    return GeometricDraw(float(kx), float(kz), float(degrees), flipped)


def sample_gamma(rng, cfg=AugmentationConfig()):
    """Log-symmetric draw in ``gamma_range``: brightening and darkening equally likely."""
    lo, hi = cfg.gamma_range
    g = rng.uniform(1.0, hi)
    if rng.random() < 0.5:
        g = max(1.0 / g, lo)
    return float(g)


def apply_geometric(p, t, draw):
    p, t = stretch(p, t, draw.kx, draw.kz)
    p, t = rotate(p, t, draw.degrees)
    if draw.flip:
        p, t = flip(p, t)
    return p, t


def transform_layout(layout, draw, W):
    """The 3D counterpart of ``apply_geometric`` acting on a layout."""
    out = layout.stretched(draw.kx, draw.kz)
    shift = int(round(draw.degrees * W / 360.0)) % W
    out = out.yawed(2 * np.pi * shift / W)
    if draw.flip:
        out = out.mirrored()
    return out


def augment_labeled(pix, target, rng, cfg=AugmentationConfig()):
    """Labeled branch: stretch, rotation, flip and gamma."""
    draw = sample_geometric(rng, cfg)
    g = sample_gamma(rng, cfg)
    pix, target = apply_geometric(pix, target, draw)
    return gamma(pix, g), target


def augment_unlabeled(pix, rng, cfg=AugmentationConfig()):
    """Unlabeled branch: returns (student input, teacher input).

    The student sees the geometric augmentation only; the teacher sees the
    same geometric output with gamma correction on top.
    """
    draw = sample_geometric(rng, cfg)
    g = sample_gamma(rng, cfg)
    student, _ = apply_geometric(pix, None, draw)
    return student, gamma(student, g)
