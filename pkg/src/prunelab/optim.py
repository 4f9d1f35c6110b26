"""Optimizers and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .autograd import DimensionError, Tensor


class Adam:
    """Standard Adam with bias correction.

    epsilon defaults to 1e-2 to match the training protocol this library
    reproduces; pass eps explicitly for conventional values.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-2):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise DimensionError(f"gradient shape {g.shape} != param shape {p.data.shape} for {k}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(np.float32)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Sgd:
    """Plain gradient descent with a constant learning rate."""

    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = dict(params)
        self.lr = lr

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise DimensionError(f"gradient shape {g.shape} != param shape {p.data.shape} for {k}")
            p.data -= (lr * g).astype(np.float32)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr to 0 over total_steps."""
    if total_steps <= 0:
        return base_lr
    frac = min(max(step, 0), total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
