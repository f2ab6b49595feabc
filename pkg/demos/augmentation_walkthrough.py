"""Apply each geometric augmentation to one room and check it against the transformed 3D layout.

Run:  python3 demos/augmentation_walkthrough.py
"""
import numpy as np

from panolayout.augment import GeometricDraw, apply_geometric, flip, gamma, rotate, stretch, transform_layout
from panolayout.data import generate_rooms
from panolayout.geometry import layout_to_boundary

scene = generate_rooms(1, seed=3)[0]
pix, t = scene.panorama.pixels, scene.target()
H, W = pix.shape[1:]


def rows_off(a, b):
    return float(np.abs(a.as_array()[:2] - b.as_array()[:2]).max() * H / np.pi)


draws = {
    "rotate 90": GeometricDraw(degrees=90.0),
    "flip": GeometricDraw(degrees=0.0, flip=True),
    "stretch 1.4 x 0.8": GeometricDraw(1.4, 0.8, 0.0),
    "all three": GeometricDraw(0.7, 1.3, 200.0, True),
}
for name, draw in draws.items():
    _, aug = apply_geometric(pix, t, draw)
    ref = layout_to_boundary(transform_layout(scene.layout, draw, W), W)
    print(f"{name:>18}: max boundary deviation {rows_off(aug, ref):.3f} rows")

p, _ = rotate(pix, None, 360.0)
print("rotate 360 is identity:", np.array_equal(p, pix))
p, _ = flip(*flip(pix, t))
print("flip twice is identity:", np.array_equal(p, pix))
there, _ = stretch(pix, None, 1.3, 0.7)
back, _ = stretch(there, None, 1 / 1.3, 1 / 0.7)
print(f"stretch round trip MAE {np.abs(back - pix).mean():.4f}")
print(f"gamma 2.0 darkens the mean from {pix.mean():.3f} to {gamma(pix, 2.0).mean():.3f}")
