"""Continuous image coordinates and their mapping onto discrete grids.

Both axes use pixel-center normalized coordinates: column j of a width-W
grid sits at x = -1 + (2j+1)/W, so the image spans [-1, 1] with half a
pixel of margin outside the outermost centers.  Coordinate pairs are always
(x, y) with x along width and y along height.  Queries outside [-1, 1] are
clamped componentwise before any index math.
"""

from __future__ import annotations

import numpy as np


def axis_centers(n: int, dtype=np.float64) -> np.ndarray:
    """Centers of n cells tiling [-1, 1]."""
    j = np.arange(n, dtype=dtype)
    return -1.0 + (2.0 * j + 1.0) / n


def coord_grid(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """[2, h, w] map of pixel-center coordinates; channel 0 is x, channel 1 is y."""
    xs = axis_centers(w, dtype)
    ys = axis_centers(h, dtype)
    gx = np.broadcast_to(xs[None, :], (h, w))
    gy = np.broadcast_to(ys[:, None], (h, w))
    return np.stack([gx, gy], axis=0)


def flat_coords(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """[h*w, 2] (x, y) pairs in row-major pixel order."""
    g = coord_grid(h, w, dtype)
    return np.ascontiguousarray(g.reshape(2, h * w).T)


def _axis_index(v: np.ndarray, n: int) -> np.ndarray:
    # cell j covers u in [j, j+1]; ceil(u)-1 sends exact boundaries to the
    # lower cell, which is the documented tie rule
    u = (np.clip(v, -1.0, 1.0) + 1.0) * (n / 2.0)
    idx = np.ceil(u) - 1.0
    return np.clip(idx, 0, n - 1).astype(np.int64)


def nearest_index(xy: np.ndarray, h: int, w: int) -> np.ndarray:
    """Row-major flat index of the pixel center nearest each (x, y) query.

    Equidistant queries (exactly on a cell boundary) resolve to the lower
    index on that axis.  Accepts any leading shape ending in a length-2 axis.
    """
    xy = np.asarray(xy)
    if xy.shape[-1] != 2:
        raise ValueError(f"coordinates must have a trailing axis of 2, got {xy.shape}")
    col = _axis_index(xy[..., 0], w)
    row = _axis_index(xy[..., 1], h)
    return row * w + col


def bilinear_parts(xy: np.ndarray, h: int, w: int):
    """Corner indices and weights for bilinear sampling with border clamp.

    Returns (idx, wgt): idx is int64 [4, ...] of flat row-major pixel indices
    and wgt is float64 [4, ...] summing to 1, corner order (tl, tr, bl, br).
    Align-corners-false: the sample point is expressed in continuous pixel
    units u = (v+1)*n/2 - 0.5 and the two straddling centers are clamped to
    the border.
    """
    xy = np.asarray(xy, dtype=np.float64)
    if xy.shape[-1] != 2:
        raise ValueError(f"coordinates must have a trailing axis of 2, got {xy.shape}")
    ux = (np.clip(xy[..., 0], -1.0, 1.0) + 1.0) * (w / 2.0) - 0.5
    uy = (np.clip(xy[..., 1], -1.0, 1.0) + 1.0) * (h / 2.0) - 0.5
    x0 = np.floor(ux)
    y0 = np.floor(uy)
    fx = ux - x0
    fy = uy - y0
    c0 = np.clip(x0, 0, w - 1).astype(np.int64)
    c1 = np.clip(x0 + 1, 0, w - 1).astype(np.int64)
    r0 = np.clip(y0, 0, h - 1).astype(np.int64)
    r1 = np.clip(y0 + 1, 0, h - 1).astype(np.int64)
    idx = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1], axis=0)
    wgt = np.stack(
        [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx],
        axis=0,
    )
    return idx, wgt
