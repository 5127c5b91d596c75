"""Optimizers and learning-rate schedules.

Update rules follow the common convention: weight decay is folded into the
gradient before the momentum/moment updates, Adam uses bias-corrected
moments, and SGD momentum buffers start equal to the first gradient.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = list(params)
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError


class Sgd(Optimizer):
    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._buf: list[np.ndarray | None] = [None] * len(self.params)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                if self._buf[i] is None:
                    self._buf[i] = g.copy()
                else:
                    self._buf[i] = self.momentum * self._buf[i] + g
                g = self._buf[i]
            p.data -= self.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self._m[i] / bc1
            vhat = self._v[i] / bc2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def poly_lr(lr0: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    """lr0 * (1 - iter/max_iter)^power, clamped at the final iteration."""
    if max_iter <= 0:
        raise ValueError("max_iter must be positive")
    frac = min(max(iteration, 0), max_iter) / max_iter
    return lr0 * (1.0 - frac) ** power


class ReduceOnPlateau:
    """Multiply the optimizer lr by `factor` after `patience` epochs without improvement."""

    def __init__(self, opt: Optimizer, patience: int = 20, factor: float = 0.1, min_delta: float = 0.0):
        self.opt = opt
        self.patience = int(patience)
        self.factor = float(factor)
        self.min_delta = float(min_delta)
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> bool:
        """Feed one epoch's monitored value; returns True if lr was reduced."""
        if metric < self.best - self.min_delta:
            self.best = metric
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.opt.lr *= self.factor
            self.bad_epochs = 0
            return True
        return False
