"""Synthetic grayscale segmentation data: bright shapes on a noisy
gradient background.

Each image draws 1-3 shapes, a mix of rotated ellipses and axis-aligned
rectangles, with half-extents from ~6% to ~28% of the frame so objects
span both single feature-map cells and many.  Foreground classes sit in
intensity bands above the background, offset per class id.  Every image
uses its own child stream of the dataset seed, so the i-th image is
identical no matter how many images are requested or in which order they
are rendered.  Later shapes overwrite earlier ones in the mask.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import Rng


def ellipse_mask(hw: int, cx: float, cy: float, a: float, b: float, theta: float) -> np.ndarray:
    """Bool [hw, hw] of pixels inside the rotated ellipse (pixel units)."""
    rr, cc = np.mgrid[0:hw, 0:hw].astype(np.float64)
    dx = cc - cx
    dy = rr - cy
    xr = dx * math.cos(theta) + dy * math.sin(theta)
    yr = -dx * math.sin(theta) + dy * math.cos(theta)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def rect_mask(hw: int, x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    """Bool [hw, hw] of pixels whose index lies in [x0,x1) x [y0,y1)."""
    rr, cc = np.mgrid[0:hw, 0:hw].astype(np.float64)
    return (cc >= x0) & (cc < x1) & (rr >= y0) & (rr < y1)


def render_image(rng: Rng, hw: int, n_classes: int, noise: float = 0.04) -> tuple[np.ndarray, np.ndarray]:
    """One (image [1, hw, hw] float32 in [0,1], mask [hw, hw] uint8) pair."""
    base = 0.2 + 0.15 * rng.uniform()
    gx = (rng.uniform() - 0.5) * 0.3
    gy = (rng.uniform() - 0.5) * 0.3
    rr, cc = np.mgrid[0:hw, 0:hw].astype(np.float64) / hw
    shading = base + gx * cc + gy * rr
    img = shading.copy()

    mask = np.zeros((hw, hw), dtype=np.uint8)
    n_shapes = 1 + rng.randbelow(3)
    for _ in range(n_shapes):
        cx = (0.2 + 0.6 * rng.uniform()) * hw
        cy = (0.2 + 0.6 * rng.uniform()) * hw
        a = (0.06 + 0.22 * rng.uniform()) * hw
        b = (0.06 + 0.22 * rng.uniform()) * hw
        cls = 1 if n_classes == 2 else 1 + rng.randbelow(n_classes - 1)
        if rng.uniform() < 0.5:
            theta = rng.uniform() * math.pi
            inside = ellipse_mask(hw, cx, cy, a, b, theta)
        else:
            inside = rect_mask(hw, cx - a, cy - b, cx + a, cy + b)
        lift = 0.3 + 0.15 * rng.uniform() + 0.08 * (cls - 1)
        img = np.where(inside, shading + lift, img)
        mask[inside] = cls

    if noise > 0.0:
        img = img + rng.normal_array((hw, hw), std=noise)
    img = np.clip(img, 0.0, 1.0)
    return img[None].astype(np.float32), mask


def make_dataset(n: int, hw: int, n_classes: int, rng: Rng, noise: float = 0.04) -> tuple[np.ndarray, np.ndarray]:
    """n images as ([n, 1, hw, hw] float32, [n, hw, hw] uint8)."""
    images = np.zeros((n, 1, hw, hw), dtype=np.float32)
    masks = np.zeros((n, hw, hw), dtype=np.uint8)
    for i in range(n):
        images[i], masks[i] = render_image(rng.child(i), hw, n_classes, noise)
    return images, masks
