"""End-to-end segmentation models.

Q2aModel: encoder -> query generator -> continuous-pyramid decode -> head.
For every target coordinate the generator emits K queries; the pyramid
returns one aligned feature per query; the head consumes the K aligned
features concatenated in query order and emits class logits.

BaselineModel: the control for benchmarks.  Same encoder family, but the
decoder interpolates each pyramid level at the target coordinate directly
(no queries, no offsets) and feeds the concatenation through an MLP whose
hidden width is chosen so its decoder parameter count matches the query
decoder within a tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .coords import bilinear_parts, flat_coords, nearest_index
from .encoder import Encoder
from .nn import Mlp
from .pyramid import Fcfp
from .querygen import QueryGenerator, to_channels_last
from .rng import Rng


@dataclass(frozen=True)
class Ablation:
    no_pa: bool = False
    no_cell_embed: bool = False
    no_voting: bool = False
    no_spatial_enc: bool = False
    no_unfold: bool = False
    no_stop_grad: bool = False

    @staticmethod
    def from_name(name: str) -> "Ablation":
        if name in ("", "none", "full"):
            return Ablation()
        valid = {f.name for f in fields(Ablation)}
        if name not in valid:
            raise ValueError(f"unknown ablation {name!r}; one of none, {', '.join(sorted(valid))}")
        return Ablation(**{name: True})


# fixed emission order for ablation sweeps
ABLATION_ORDER = ["no_pa", "no_cell_embed", "no_voting", "no_spatial_enc", "no_unfold", "full", "no_stop_grad"]


class Q2aModel:
    def __init__(
        self,
        in_channels: int,
        n_classes: int,
        channels=(32, 64, 96, 128),
        k: int = 4,
        s: int = 2,
        enc_levels: int = 2,
        cell_width: int = 2,
        aligned_width: int = 64,
        fcfp_hidden=(512, 256),
        head_hidden: int = 128,
        tau1: float = -4.5 * np.log(2.0),
        tau2: float = 2.5 * np.log(2.0),
        ablation: Ablation = Ablation(),
        rng: Rng = None,
        dtype=np.float32,
    ):
        self.n_classes = int(n_classes)
        self.k = int(k)
        self.aligned_width = int(aligned_width)
        self.ablation = ablation
        self.dtype = dtype
        self.encoder = Encoder(in_channels, channels, rng.child(0), dtype)
        self.generator = QueryGenerator(
            channels, k, tau1, tau2, rng.child(1), dtype, unfold=not ablation.no_unfold
        )
        self.fcfp = Fcfp(
            channels,
            s=s,
            enc_levels=enc_levels,
            cell_width=cell_width,
            aligned_width=aligned_width,
            hidden=fcfp_hidden,
            rng=rng.child(2),
            dtype=dtype,
            use_pa=not ablation.no_pa,
            use_voting=not ablation.no_voting,
            use_cell_embed=not ablation.no_cell_embed,
            use_spatial_enc=not ablation.no_spatial_enc,
            stop_grad_coord=not ablation.no_stop_grad,
        )
        self.head = Mlp([k * aligned_width, head_hidden, n_classes], rng.child(3), dtype)

    def named_parameters(self):
        out = self.encoder.named_parameters("enc")
        out += self.generator.named_parameters("gen")
        out += self.fcfp.named_parameters("fcfp")
        out += self.head.named_parameters("head")
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def decoder_param_count(self) -> int:
        """Everything after the encoder."""
        return self.generator.param_count() + self.fcfp.param_count() + self.head.param_count()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def decode(self, fmaps: list[Tensor], coords: np.ndarray) -> dict:
        """Decode class logits at continuous coordinates.

        fmaps: pyramid levels [B, C_i, h_i, w_i]; coords: [P, 2] shared by
        the whole batch.  Returns logits [B, P, N] plus query internals.
        """
        b = fmaps[0].shape[0]
        p = coords.shape[0]
        level_hw = [(f.shape[2], f.shape[3]) for f in fmaps]
        cl_maps = [to_channels_last(f) for f in fmaps]

        dx, dy, wq, hq = self.generator(cl_maps, level_hw, coords)
        cx = Tensor(coords[:, 0:1].astype(self.dtype))  # [P, 1] broadcasts over [B, P, K]
        cy = Tensor(coords[:, 1:2].astype(self.dtype))
        px = ad.clamp(cx + dx, -1.0, 1.0)
        py = ad.clamp(cy + dy, -1.0, 1.0)

        r = p * self.k
        px_r = ad.reshape(px, (b, r, 1))
        py_r = ad.reshape(py, (b, r, 1))
        wq_r = ad.reshape(wq, (b, r, 1))
        hq_r = ad.reshape(hq, (b, r, 1))

        aligned = self.fcfp(cl_maps, level_hw, px_r, py_r, wq_r, hq_r)
        stacked = ad.reshape(aligned, (b, p, self.k * self.aligned_width))
        logits = self.head(stacked)
        return {
            "logits": logits,
            "queries": (dx, dy, wq, hq),
            "centers": (px, py),
            "aligned": aligned,
        }

    def forward(self, x: Tensor, coords: np.ndarray) -> dict:
        return self.decode(self.encoder(x), coords)

    def infer_maps(self, x: Tensor, out_hw: tuple[int, int]) -> dict:
        """Spatial-layout inference at an arbitrary output grid.

        Returns numpy maps: queries [4K, Hq, Wq], aligned [K*C_a, Hq, Wq],
        probs [N, Hq, Wq] (softmax over classes), pred [Hq, Wq].
        """
        hq_, wq_ = out_hw
        coords = flat_coords(hq_, wq_)
        with ad.no_grad():
            out = self.forward(x, coords)
        b = x.shape[0]
        if b != 1:
            raise ValueError("infer_maps expects a single-image batch")
        dx, dy, wq, hq = (t.data[0] for t in out["queries"])
        q = np.concatenate([dx, dy, wq, hq], axis=-1)  # [P, 4K]
        qmap = q.reshape(hq_, wq_, 4 * self.k).transpose(2, 0, 1)
        amap = out["aligned"].data[0].reshape(hq_, wq_, self.k * self.aligned_width).transpose(2, 0, 1)
        logits = out["logits"].data[0]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        pmap = probs.reshape(hq_, wq_, self.n_classes).transpose(2, 0, 1)
        return {
            "queries": qmap,
            "aligned": amap,
            "probs": pmap,
            "pred": pmap.argmax(axis=0).astype(np.int64),
        }


class BaselineModel:
    """Direct interpolation decoder with a parameter-matched MLP."""

    def __init__(
        self,
        in_channels: int,
        n_classes: int,
        channels=(32, 64, 96, 128),
        target_decoder_params: int = None,
        sample: str = "bilinear",
        rng: Rng = None,
        dtype=np.float32,
        tolerance: float = 0.10,
    ):
        if sample not in ("bilinear", "nearest"):
            raise ValueError(f"sample must be bilinear or nearest, got {sample!r}")
        self.n_classes = int(n_classes)
        self.sample = sample
        self.dtype = dtype
        self.encoder = Encoder(in_channels, channels, rng.child(0), dtype)
        in_width = sum(channels)
        if target_decoder_params is None:
            raise ValueError("baseline needs the query decoder's parameter count to match against")
        h = _match_hidden(target_decoder_params, in_width, self.n_classes)
        self.hidden = h
        self.mlp = Mlp([in_width, h, h, self.n_classes], rng.child(1), dtype)
        got = self.mlp.param_count()
        rel = abs(got - target_decoder_params) / target_decoder_params
        if rel > tolerance:
            raise ValueError(
                f"could not match decoder size: target {target_decoder_params}, best {got} ({rel:.1%} off)"
            )

    def named_parameters(self):
        return self.encoder.named_parameters("enc") + self.mlp.named_parameters("dec.mlp")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def decoder_param_count(self) -> int:
        return self.mlp.param_count()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def decode(self, fmaps: list[Tensor], coords: np.ndarray) -> dict:
        b = fmaps[0].shape[0]
        p = coords.shape[0]
        parts = []
        for f in fmaps:
            h, w = f.shape[2], f.shape[3]
            cl = to_channels_last(f)
            if self.sample == "nearest":
                idx = nearest_index(coords, h, w)
                parts.append(ad.gather_rows(cl, np.broadcast_to(idx, (b, p))))
            else:
                idx4, wgt4 = bilinear_parts(coords, h, w)
                acc = None
                for c in range(4):
                    zc = ad.gather_rows(cl, np.broadcast_to(idx4[c], (b, p)))
                    term = zc * Tensor(wgt4[c][:, None].astype(self.dtype))
                    acc = term if acc is None else acc + term
                parts.append(acc)
        feats = ad.concat(parts, axis=-1)
        return {"logits": self.mlp(feats)}

    def forward(self, x: Tensor, coords: np.ndarray) -> dict:
        return self.decode(self.encoder(x), coords)


def _match_hidden(target: int, in_width: int, n_classes: int) -> int:
    """Smallest-error hidden width for in->h->h->n against a parameter budget."""

    def count(h):
        return in_width * h + h + h * h + h + h * n_classes + n_classes

    best, best_err = 1, abs(count(1) - target)
    for h in range(2, 8193):
        err = abs(count(h) - target)
        if err < best_err:
            best, best_err = h, err
        if count(h) > 2 * target:
            break
    return best
