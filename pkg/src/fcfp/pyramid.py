"""Fully continuous feature pyramid: decode a latent vector for any
(coordinate, cell) query against a fixed multiscale feature stack.

Each query cell is partitioned into s x s subcells; the nearest grid code
under each subcell center is fetched, the codes average into the cell's
latent (partition-and-aggregate), and a voting rule turns pairwise code
distances into weights that place the cell's representative coordinate.
The decode MLP then consumes, per pyramid level, the aggregated code, the
query's offset from the representative coordinate, and a sin/cos encoding
of that offset, plus a learned embedding of the cell extent.

Numerical notes.  Sums over subcells use balanced pairwise trees, so for
s=2 the aggregation is bitwise exact when all four subcells resolve to the
same grid cell: the latent equals the shared code and the representative
coordinate equals the shared center.  The voting chain is evaluated
literally (exp of negated distance sums, then normalization); if every
vote underflows to zero the weights fall back to uniform 1/s^2 and the
event is counted in `fallback_events`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .coords import axis_centers, nearest_index
from .nn import Mlp
from .rng import Rng


def subcell_factors(s: int) -> list[tuple[float, float]]:
    """Offsets of subcell centers in cell units, row-major over (row j, col l).

    Entry (fy, fx) scales (cell height, cell width): the j-th row, l-th
    column subcell center sits at (x + w*fx, y + h*fy) with 1-based j, l.
    """
    out = []
    for j in range(1, s + 1):
        for l in range(1, s + 1):
            fx = (2 * l - 1 - s) / (2 * s)
            fy = (2 * j - 1 - s) / (2 * s)
            out.append((fy, fx))
    return out


def _tree_sum(terms):
    """Balanced pairwise sum; deterministic and exact for equal power-of-two terms."""
    terms = list(terms)
    while len(terms) > 1:
        nxt = [terms[i] + terms[i + 1] for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0]


def pa_latent(codes: list[Tensor]) -> Tensor:
    """Mean of the subcell codes.  Exact when all codes are bitwise equal
    and the count is a power of two."""
    return _tree_sum(codes) * (1.0 / len(codes))


def voting_weights(codes: list[Tensor]):
    """Similarity votes over subcell codes -> normalized weights.

    Each subcell's vote strength is exp(-sum of its L2 distances to the
    others); self distance is zero so the self vote is 1.  Returns
    (weights, bad) where bad flags rows whose vote total underflowed to
    zero (or went non-finite); those rows get uniform weights.
    """
    n = len(codes)
    dists = {}
    for u in range(n):
        for v in range(u + 1, n):
            diff = codes[u] - codes[v]
            dists[(u, v)] = ad.sqrt(ad.reduce_sum(diff * diff, axis=-1, keepdims=True))
    alphas = []
    for j in range(n):
        terms = [dists[(min(u, j), max(u, j))] for u in range(n) if u != j]
        if terms:
            alphas.append(ad.exp(-_tree_sum(terms)))
        else:  # single subcell: vote is exp(0) = 1
            alphas.append(ad.exp(Tensor(np.zeros_like(codes[0].data[..., :1]))))
    total = _tree_sum(alphas)
    bad = ~(np.isfinite(total.data) & (total.data > 0))
    if bad.any():
        safe = ad.where_mask(bad, Tensor(np.ones_like(total.data)), total)
        uniform = Tensor(np.full_like(total.data, 1.0 / n))
        weights = [ad.where_mask(bad, uniform, a / safe) for a in alphas]
    else:
        weights = [a / total for a in alphas]
    return weights, bad


def pa_coordinate(centers, weights, stop: bool = True):
    """Vote-weighted mean of the subcell nearest-pixel centers.

    centers is a list of (cx, cy) constant arrays shaped [..., 1].  With
    stop=True (the default model) the result is cut from the tape, so no
    gradient reaches the codes through the coordinate."""
    ppx = _tree_sum([wt * Tensor(cx) for wt, (cx, _) in zip(weights, centers)])
    ppy = _tree_sum([wt * Tensor(cy) for wt, (_, cy) in zip(weights, centers)])
    if stop:
        ppx = ad.stop_grad(ppx)
        ppy = ad.stop_grad(ppy)
    return ppx, ppy


class Fcfp:
    def __init__(
        self,
        channels,
        s: int = 2,
        enc_levels: int = 2,
        cell_width: int = 2,
        aligned_width: int = 64,
        hidden=(512, 256),
        rng: Rng = None,
        dtype=np.float32,
        use_pa: bool = True,
        use_voting: bool = True,
        use_cell_embed: bool = True,
        use_spatial_enc: bool = True,
        stop_grad_coord: bool = True,
    ):
        self.channels = tuple(channels)
        self.s = int(s)
        self.enc_levels = int(enc_levels)  # L sin/cos frequency pairs
        self.cell_width = int(cell_width)  # C_e
        self.aligned_width = int(aligned_width)  # C_a
        self.dtype = dtype
        self.use_pa = use_pa
        self.use_voting = use_voting
        self.use_cell_embed = use_cell_embed
        self.use_spatial_enc = use_spatial_enc
        self.stop_grad_coord = stop_grad_coord
        self.fallback_events = 0

        per_level = [c + 2 + (4 * self.enc_levels if use_spatial_enc else 0) for c in self.channels]
        self.in_width = sum(per_level) + (2 * self.cell_width if use_cell_embed else 0)
        self.mlp = Mlp([self.in_width, *list(hidden), self.aligned_width], rng, dtype)
        self.omega = Tensor(
            np.array([2.0**l for l in range(1, self.enc_levels + 1)], dtype=dtype), requires_grad=True
        )
        self.cell_e = Tensor(np.ones(self.cell_width, dtype=dtype), requires_grad=True)

    def named_parameters(self, prefix: str = "fcfp"):
        out = self.mlp.named_parameters(prefix + ".mlp")
        if self.use_spatial_enc:
            out.append((prefix + ".omega", self.omega))
        if self.use_cell_embed:
            out.append((prefix + ".cell_e", self.cell_e))
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    # -- per-level partition and aggregate ---------------------------------

    def _centers_of(self, idx: np.ndarray, h: int, w: int):
        cx = axis_centers(w)[idx % w].astype(self.dtype)
        cy = axis_centers(h)[idx // w].astype(self.dtype)
        return cx[..., None], cy[..., None]  # [..., 1]

    def _nearest_level(self, cl: Tensor, h: int, w: int, px: Tensor, py: Tensor):
        """Plain nearest-code lookup (partition-and-aggregate disabled)."""
        xy = np.stack([px.data[..., 0], py.data[..., 0]], axis=-1)
        idx = nearest_index(xy, h, w)
        z = ad.gather_rows(cl, idx)
        cx, cy = self._centers_of(idx, h, w)
        relx = px - Tensor(cx)
        rely = py - Tensor(cy)
        return z, relx, rely

    def _pa_level(self, cl: Tensor, h: int, w: int, px: Tensor, py: Tensor, wq: Tensor, hq: Tensor):
        """Aggregate s*s subcell codes into (z_pa, rel_x, rel_y) for one level."""
        s2 = self.s * self.s
        codes = []
        centers = []
        for fy, fx in subcell_factors(self.s):
            qx = ad.clamp(px + wq * fx, -1.0, 1.0)
            qy = ad.clamp(py + hq * fy, -1.0, 1.0)
            xy = np.stack([qx.data[..., 0], qy.data[..., 0]], axis=-1)
            idx = nearest_index(xy, h, w)
            codes.append(ad.gather_rows(cl, idx))
            centers.append(self._centers_of(idx, h, w))

        z_pa = pa_latent(codes)

        if self.use_voting:
            weights, bad = voting_weights(codes)
            if bad.any():
                self.fallback_events += int(bad.sum())
            ppx, ppy = pa_coordinate(centers, weights, stop=self.stop_grad_coord)
        else:
            # uniform weights: the representative coordinate is a constant
            ppx = Tensor(_tree_sum([cx for cx, _ in centers]) * (1.0 / s2))
            ppy = Tensor(_tree_sum([cy for _, cy in centers]) * (1.0 / s2))

        relx = px - ppx
        rely = py - ppy
        return z_pa, relx, rely

    # -- encodings ----------------------------------------------------------

    def spatial_enc(self, rel: Tensor) -> Tensor:
        """Interleaved (sin, cos) pairs over trainable frequencies, [..., 2L]."""
        prod = rel * self.omega  # [..., 1] x [L] -> [..., L]
        sc = ad.stack([ad.sin(prod), ad.cos(prod)], axis=-1)
        shape = list(rel.shape[:-1]) + [2 * self.enc_levels]
        return ad.reshape(sc, tuple(shape))

    def cell_embed(self, wq: Tensor, hq: Tensor) -> Tensor:
        """[w*e, h*e] with a shared trainable embedding vector, [..., 2*C_e]."""
        return ad.concat([wq * self.cell_e, hq * self.cell_e], axis=-1)

    # -- full decode ----------------------------------------------------------

    def __call__(self, cl_maps: list[Tensor], level_hw, px, py, wq, hq) -> Tensor:
        """Aligned features for query rows.

        px, py, wq, hq are [B, R, 1] tensors (R query rows per image);
        cl_maps are channels-last pyramid levels [B, h_i*w_i, C_i].
        Returns [B, R, aligned_width].
        """
        parts = []
        for cl, (h, w) in zip(cl_maps, level_hw):
            if self.use_pa:
                z, relx, rely = self._pa_level(cl, h, w, px, py, wq, hq)
            else:
                z, relx, rely = self._nearest_level(cl, h, w, px, py)
            parts.extend([z, relx, rely])
            if self.use_spatial_enc:
                parts.append(self.spatial_enc(relx))
                parts.append(self.spatial_enc(rely))
        if self.use_cell_embed:
            parts.append(self.cell_embed(wq, hq))
        feats = ad.concat(parts, axis=-1)
        return self.mlp(feats)
