"""Segmentation losses over per-coordinate logits."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def log_softmax(logits: Tensor) -> Tensor:
    """Stable log-softmax over the trailing class axis."""
    m = ad.max_const(logits, axis=-1, keepdims=True)
    shifted = logits - m
    lse = ad.log(ad.reduce_sum(ad.exp(shifted), axis=-1, keepdims=True))
    return shifted - lse


def one_hot(labels: np.ndarray, n_classes: int, dtype) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels out of range [0, {n_classes})")
    out = np.zeros(labels.shape + (n_classes,), dtype=dtype)
    np.put_along_axis(out, labels[..., None].astype(np.int64), 1.0, axis=-1)
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood; labels are integer class ids [B, P]."""
    n = logits.shape[-1]
    lp = log_softmax(logits)
    oh = Tensor(one_hot(labels, n, logits.data.dtype))
    nll = ad.reduce_sum(lp * oh, axis=-1)
    return -ad.reduce_mean(nll)


def dice_loss(logits: Tensor, labels: np.ndarray, eps: float = 1.0) -> Tensor:
    """Soft dice over all classes, computed per image then averaged.

    Uses softmax probabilities against the one-hot target with an epsilon
    of 1 in numerator and denominator, so images where a class is absent
    contribute a finite, well-behaved term.
    """
    n = logits.shape[-1]
    probs = ad.exp(log_softmax(logits))
    oh = one_hot(labels, n, logits.data.dtype)
    inter = ad.reduce_sum(probs * Tensor(oh), axis=1)  # [B, N]
    psum = ad.reduce_sum(probs, axis=1)
    gsum = Tensor(oh.sum(axis=1))
    dice = (2.0 * inter + eps) / (psum + gsum + eps)
    return 1.0 - ad.reduce_mean(dice)


def combined_loss(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, float, float]:
    """Cross entropy plus dice, equally weighted; returns (loss, ce, dice) values."""
    ce = cross_entropy(logits, labels)
    dl = dice_loss(logits, labels)
    return ce + dl, ce.item(), dl.item()
