"""Query generation: one shared linear layer maps unfolded pyramid codes to
per-coordinate query quadruples (dx, dy, w, h) for K queries.

The generator input for a coordinate is, per pyramid level, the 3x3-unfolded
latent code at the nearest grid cell plus the coordinate's offset from that
cell center, concatenated level by level.  A single fully connected layer
produces 4K raw values; offsets squash through tanh into (-1, 1) and cell
extents map through exp(tau1 + tau2*tanh(.)), so extents stay inside
(exp(tau1-tau2), exp(tau1+tau2)) by construction.

There are two equivalent forward routes.  The reference route materializes
the per-query input vector exactly as described above.  The fused route
projects each level's unfolded map through the matching rows of the weight
matrix first and gathers afterwards; since row gathering commutes with a
shared linear map, the result is the same while the projection runs over
grid cells instead of (usually more numerous) queries.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .coords import axis_centers, flat_coords, nearest_index
from .nn import Linear
from .rng import Rng

_NEIGH_CACHE: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray]]] = {}


def _neighbor_table(h: int, w: int):
    """Nine (clipped flat index, validity mask) pairs in row-major (dy, dx) order."""
    key = (h, w)
    if key not in _NEIGH_CACHE:
        r = np.arange(h * w, dtype=np.int64) // w
        c = np.arange(h * w, dtype=np.int64) % w
        table = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                rr = r + dy
                cc = c + dx
                valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
                nidx = np.clip(rr, 0, h - 1) * w + np.clip(cc, 0, w - 1)
                table.append((nidx, valid))
        _NEIGH_CACHE[key] = table
    return _NEIGH_CACHE[key]


def to_channels_last(fmap: Tensor) -> Tensor:
    """[B, C, h, w] -> [B, h*w, C] with row-major pixel order."""
    b, c, h, w = fmap.shape
    return ad.reshape(ad.transpose(fmap, (0, 2, 3, 1)), (b, h * w, c))


def unfold3x3_rows(x: Tensor, h: int, w: int) -> Tensor:
    """Unfold [B, h*w, C] rows to [B, h*w, 9C], zero outside the image.

    Neighbor blocks are ordered row-major over (dy, dx) in {-1,0,1}^2, each
    block carrying the neighbor's full C channels.
    """
    b, hw, c = x.shape
    if hw != h * w:
        raise ValueError(f"row count {hw} does not match {h}x{w}")
    parts = []
    for nidx, valid in _neighbor_table(h, w):
        part = ad.gather_rows(x, np.broadcast_to(nidx, (b, hw)))
        if not valid.all():
            mask = Tensor(valid[:, None].astype(x.data.dtype))
            part = part * mask
        parts.append(part)
    return ad.concat(parts, axis=-1)


def unfold3x3(fmap: Tensor) -> Tensor:
    """Spatial-layout unfolding: [C, H, W] -> [9C, H, W]."""
    c, h, w = fmap.shape
    rows = ad.reshape(ad.transpose(ad.reshape(fmap, (c, h * w)), (1, 0)), (1, h * w, c))
    u = unfold3x3_rows(rows, h, w)
    return ad.reshape(ad.transpose(ad.reshape(u, (h * w, 9 * c)), (1, 0)), (9 * c, h, w))


class QueryGenerator:
    """Shared-input linear head emitting K query quadruples per coordinate."""

    def __init__(
        self,
        channels,
        k: int,
        tau1: float,
        tau2: float,
        rng: Rng,
        dtype=np.float32,
        unfold: bool = True,
    ):
        self.channels = tuple(channels)
        self.k = int(k)
        self.tau1 = float(tau1)
        self.tau2 = float(tau2)
        self.unfold = bool(unfold)
        self.dtype = dtype
        mult = 9 if unfold else 1
        self.level_widths = [mult * c + 2 for c in self.channels]
        self.in_width = sum(self.level_widths)
        self.fc = Linear(self.in_width, 4 * self.k, rng, dtype)

    def named_parameters(self, prefix: str = "gen"):
        return self.fc.named_parameters(prefix + ".fc")

    def param_count(self) -> int:
        return self.fc.param_count()

    # -- shared geometry ---------------------------------------------------

    def _level_tables(self, level_hw, coords: np.ndarray):
        """Per level: nearest flat index [P] and offset from that center [P, 2]."""
        tables = []
        for h, w in level_hw:
            idx = nearest_index(coords, h, w)
            cx = axis_centers(w)[idx % w]
            cy = axis_centers(h)[idx // w]
            rel = np.stack([coords[:, 0] - cx, coords[:, 1] - cy], axis=1)
            tables.append((idx, rel))
        return tables

    # -- reference route -----------------------------------------------------

    def gen_inr_features(self, cl_maps: list[Tensor], level_hw, coords: np.ndarray) -> Tensor:
        """Materialize the concatenated generator input, [B, P, in_width]."""
        b = cl_maps[0].shape[0]
        p = coords.shape[0]
        parts = []
        for (cl, (h, w), (idx, rel)) in zip(cl_maps, level_hw, self._level_tables(level_hw, coords)):
            u = unfold3x3_rows(cl, h, w) if self.unfold else cl
            z = ad.gather_rows(u, np.broadcast_to(idx, (b, p)))
            rel_t = Tensor(np.broadcast_to(rel.astype(self.dtype), (b, p, 2)).copy())
            parts.append(z)
            parts.append(rel_t)
        return ad.concat(parts, axis=-1)

    def raw_reference(self, cl_maps: list[Tensor], level_hw, coords: np.ndarray) -> Tensor:
        return self.fc(self.gen_inr_features(cl_maps, level_hw, coords))

    # -- fused route ---------------------------------------------------------

    def raw_fused(self, cl_maps: list[Tensor], level_hw, coords: np.ndarray) -> Tensor:
        b = cl_maps[0].shape[0]
        p = coords.shape[0]
        offsets = []
        pos = 0
        for width in self.level_widths:
            offsets.append(pos)
            pos += width
        total = None
        for (cl, (h, w), (idx, rel), off, width) in zip(
            cl_maps, level_hw, self._level_tables(level_hw, coords), offsets, self.level_widths
        ):
            u = unfold3x3_rows(cl, h, w) if self.unfold else cl
            wz = ad.narrow(self.fc.w, 0, off, width - 2)
            proj = ad.matmul(u, wz)
            picked = ad.gather_rows(proj, np.broadcast_to(idx, (b, p)))
            wr = ad.narrow(self.fc.w, 0, off + width - 2, 2)
            rel_term = ad.matmul(Tensor(rel.astype(self.dtype)), wr)
            contrib = picked + rel_term
            total = contrib if total is None else total + contrib
        return total + self.fc.b

    # -- query assembly --------------------------------------------------------

    def queries_from_raw(self, raw: Tensor):
        """Split raw [B, P, 4K] into (dx, dy, w, h), each [B, P, K].

        The squash is tanh clamped one epsilon inside (-1, 1): plain tanh
        rounds to exactly +/-1 once |raw| exceeds ~19 in f64 (~8 in f32),
        which would break the strict open-interval range guarantee for the
        offsets and push the extents onto their bounds.  The clamp only
        engages where the true gradient has already underflowed to zero.
        """
        k = self.k
        one = 1.0 - float(np.finfo(raw.dtype).eps)

        def squash(t: Tensor) -> Tensor:
            return ad.clamp(ad.tanh(t), -one, one)

        dx = squash(ad.narrow(raw, -1, 0, k))
        dy = squash(ad.narrow(raw, -1, k, k))
        wq = ad.exp(self.tau1 + self.tau2 * squash(ad.narrow(raw, -1, 2 * k, k)))
        hq = ad.exp(self.tau1 + self.tau2 * squash(ad.narrow(raw, -1, 3 * k, k)))
        return dx, dy, wq, hq

    def __call__(self, cl_maps: list[Tensor], level_hw, coords: np.ndarray):
        return self.queries_from_raw(self.raw_fused(cl_maps, level_hw, coords))
