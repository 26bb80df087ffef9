"""Plain SGD and Adam over named parameter lists."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["SGD", "Adam", "zero_grads"]

Params = list[tuple[str, Tensor]]


def zero_grads(params: Params) -> None:
    for _name, p in params:
        p.grad = None


class SGD:
    def __init__(self, lr: float = 0.001):
        self.lr = lr

    def step(self, params: Params) -> None:
        for _name, p in params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    """Adam with bias correction; state is keyed by parameter name so a
    reconstructed model continues deterministically."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in params:
            if p.grad is None:
                continue
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * p.grad
            v = b2 * v + (1.0 - b2) * p.grad * p.grad
            self.m[name] = m
            self.v[name] = v
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
