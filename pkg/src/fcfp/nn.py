"""Small parameterized building blocks: linear layers, conv layers, MLPs.

Weights initialize uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)) and biases
at zero, with all draws taken from an explicit Rng stream so models are
reproducible from a seed.  Parameter naming is explicit (no reflection): each
block reports (name, tensor) pairs and containers prefix them.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: Rng, dtype=np.float32):
        bound = 1.0 / np.sqrt(fan_in)
        self.w = Tensor(rng.uniform_array((fan_in, fan_out), -bound, bound, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b

    def named_parameters(self, prefix: str):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]

    def param_count(self) -> int:
        return self.w.size + self.b.size


class Mlp:
    """Fully connected stack with relu between layers, linear at the output."""

    def __init__(self, dims: list[int], rng: Rng, dtype=np.float32):
        if len(dims) < 2:
            raise ValueError("Mlp needs at least an input and an output width")
        self.layers = [Linear(dims[i], dims[i + 1], rng, dtype) for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x

    def named_parameters(self, prefix: str):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"{prefix}.fc{i}"))
        return out

    def param_count(self) -> int:
        return sum(l.param_count() for l in self.layers)


class Conv2d:
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, padding: int = 1, rng: Rng = None, dtype=np.float32):
        fan_in = cin * k * k
        bound = 1.0 / np.sqrt(fan_in)
        self.w = Tensor(rng.uniform_array((cout, cin, k, k), -bound, bound, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def named_parameters(self, prefix: str):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]

    def param_count(self) -> int:
        return self.w.size + self.b.size
