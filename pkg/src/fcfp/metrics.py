"""Evaluation metrics on integer label maps: dice overlap and the 95th
percentile Hausdorff distance.

Everything here is plain numpy on predictions that are already argmaxed;
nothing touches the autodiff tape.  Distances are in pixels.  hd95 uses the
nearest-rank percentile of exact point-to-set distances between 8-connected
boundary pixels, symmetrized with max, which keeps it simple enough to
cross-check by brute force.
"""

from __future__ import annotations

import numpy as np


def dice_per_class(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class dice; a class absent from both maps scores 1."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    out = np.zeros(n_classes)
    for c in range(n_classes):
        p = pred == c
        g = gt == c
        denom = p.sum() + g.sum()
        out[c] = 1.0 if denom == 0 else 2.0 * np.logical_and(p, g).sum() / denom
    return out


def foreground_dice(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> float:
    """Mean dice over classes 1..n-1 (background excluded)."""
    if n_classes < 2:
        raise ValueError("need at least one foreground class")
    return float(dice_per_class(pred, gt, n_classes)[1:].mean())


def boundary_points(mask: np.ndarray) -> np.ndarray:
    """(row, col) pixels of mask that touch the outside under 8-connectivity.

    A pixel is boundary if any of its 8 neighbors (or the image border)
    falls outside the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = np.ones_like(mask)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            h, w = mask.shape
            interior &= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return np.argwhere(mask & ~interior)


def _directed_h95(a: np.ndarray, b: np.ndarray) -> float:
    # nearest-rank 95th percentile of min distances from each point of a to b
    diff = a[:, None, :].astype(np.float64) - b[None, :, :].astype(np.float64)
    dmin = np.sqrt((diff * diff).sum(axis=-1)).min(axis=1)
    k = int(np.ceil(0.95 * dmin.size))
    return float(np.partition(dmin, k - 1)[k - 1])


def hd95_pair(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """Symmetric 95th percentile Hausdorff distance between two binary masks.

    Both masks empty scores 0; exactly one empty scores the image diagonal
    (the worst possible distance at that resolution).
    """
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(f"shape mismatch {pred_mask.shape} vs {gt_mask.shape}")
    pa = boundary_points(pred_mask)
    ga = boundary_points(gt_mask)
    if pa.size == 0 and ga.size == 0:
        return 0.0
    if pa.size == 0 or ga.size == 0:
        h, w = pred_mask.shape
        return float(np.sqrt(float(h) ** 2 + float(w) ** 2))
    return max(_directed_h95(pa, ga), _directed_h95(ga, pa))


def foreground_hd95(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> float:
    """Mean hd95 over classes 1..n-1."""
    if n_classes < 2:
        raise ValueError("need at least one foreground class")
    vals = [hd95_pair(pred == c, gt == c) for c in range(1, n_classes)]
    return float(np.mean(vals))
