"""Render a few synthetic rooms, encode them as boundary targets and decode them back.

Run:  python3 demos/rooms_and_targets.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from panolayout.data import generate_rooms
from panolayout.geometry import boundary_to_corners, latitude_to_row
from panolayout.metrics import iou3d
from panolayout.postprocess import reconstruct

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_rooms")
out.mkdir(parents=True, exist_ok=True)

for k, scene in enumerate(generate_rooms(4, seed=7)):
    t = scene.target()
    H, W = scene.panorama.height, scene.panorama.width
    ann = boundary_to_corners(t)
    layout = reconstruct(t)
    print(f"room {k}: {scene.n_corners} corners, {len(ann)} detected, iou3d after decode {iou3d(layout, scene.layout):.2f}")

    # overlay: ceiling boundary red, floor boundary green, corner score as a bar underneath
    img = (np.transpose(scene.panorama.pixels, (1, 2, 0)) * 255).astype(np.uint8).copy()
    cols = np.arange(W)
    img[np.clip(np.round(latitude_to_row(t.yc, H)).astype(int), 0, H - 1), cols] = (255, 0, 0)
    img[np.clip(np.round(latitude_to_row(t.yf, H)).astype(int), 0, H - 1), cols] = (0, 255, 0)
    bar = np.repeat((t.yw * 255).astype(np.uint8)[None, :, None], 8, axis=0).repeat(3, axis=2)
    Image.fromarray(np.vstack([img, bar])).resize((4 * W, 4 * (H + 8)), Image.NEAREST).save(out / f"room_{k}.png")

print(f"overlays written to {out}/")
