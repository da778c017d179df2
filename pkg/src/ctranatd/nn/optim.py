from __future__ import annotations

from typing import Iterable

import numpy as np

from ctranatd.errors import NonFiniteError
from ctranatd.nn.tensor import Parameter


class Adam:
    """Adam with bias correction; moment buffers persist across ``step`` calls."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        bad = [p.name for p in self.params if not np.all(np.isfinite(p.grad))]
        if bad:
            raise NonFiniteError(f"non-finite gradient in {', '.join(bad)}; step aborted")
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr, (self.beta1, self.beta2), self.eps, self.t)


def adam_step(params, m, v, learning_rate, betas, epsilon, step) -> None:
    """One in-place Adam update of ``params`` given moment buffers ``m`` and ``v``."""
    if step < 1:
        raise ValueError("step must be >= 1")
    b1, b2 = betas
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for p, mi, vi in zip(params, m, v):
        g = p.grad
        mi *= b1
        mi += (1.0 - b1) * g
        vi *= b2
        vi += (1.0 - b2) * g * g
        p.value -= learning_rate * (mi / c1) / (np.sqrt(vi / c2) + epsilon)
