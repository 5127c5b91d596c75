"""Strided convolutional encoder producing a four-level feature pyramid.

Input [B, C, H, W] with H and W divisible by 32 maps to features at 1/4,
1/8, 1/16 and 1/32 resolution.  The stem downsamples twice through a fixed
16-channel intermediate; each later stage is one strided conv followed by
one stride-1 conv, relu after every conv.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Conv2d
from .rng import Rng


class Encoder:
    def __init__(self, in_channels: int, channels=(32, 64, 96, 128), rng: Rng = None, dtype=np.float32):
        if len(channels) != 4:
            raise ValueError("encoder needs exactly four stage widths")
        if in_channels not in (1, 3):
            raise ValueError(f"encoder input must be grayscale or rgb, got {in_channels} channels")
        self.in_channels = in_channels
        self.channels = tuple(int(c) for c in channels)
        c2, c3, c4, c5 = self.channels
        r = rng
        self.stem_a = Conv2d(in_channels, 16, 3, stride=2, padding=1, rng=r.child(0), dtype=dtype)
        self.stem_b = Conv2d(16, c2, 3, stride=2, padding=1, rng=r.child(1), dtype=dtype)
        self.blocks = []
        prev = c2
        for i, c in enumerate((c3, c4, c5)):
            down = Conv2d(prev, c, 3, stride=2, padding=1, rng=r.child(2 + 2 * i), dtype=dtype)
            keep = Conv2d(c, c, 3, stride=1, padding=1, rng=r.child(3 + 2 * i), dtype=dtype)
            self.blocks.append((down, keep))
            prev = c

    def __call__(self, x: Tensor) -> list[Tensor]:
        """Returns [F2, F3, F4, F5], finest first."""
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected [B, {self.in_channels}, H, W], got {x.shape}")
        h, w = x.shape[2], x.shape[3]
        if h % 32 or w % 32:
            raise ValueError(f"input extent must be divisible by 32, got {h}x{w}")
        y = ad.relu(self.stem_a(x))
        y = ad.relu(self.stem_b(y))
        feats = [y]
        for down, keep in self.blocks:
            y = ad.relu(down(y))
            y = ad.relu(keep(y))
            feats.append(y)
        return feats

    def named_parameters(self, prefix: str = "enc"):
        out = self.stem_a.named_parameters(prefix + ".stem_a")
        out += self.stem_b.named_parameters(prefix + ".stem_b")
        for i, (down, keep) in enumerate(self.blocks):
            out += down.named_parameters(f"{prefix}.b{i}.down")
            out += keep.named_parameters(f"{prefix}.b{i}.keep")
        return out

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def level_shapes(self, h: int, w: int) -> list[tuple[int, int]]:
        return [(h // s, w // s) for s in (4, 8, 16, 32)]
