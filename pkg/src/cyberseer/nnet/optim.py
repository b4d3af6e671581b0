from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import NumericalError


class Adam:
    """Adam with bias correction, updating a parameter dict in place."""

    def __init__(
        self,
        params: Mapping[str, np.ndarray],
        lr: float = 1e-3,
        beta_1: float = 0.9,
        beta_2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta_1**self.t
        c2 = 1.0 - self.beta_2**self.t
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name}", layer=name.split(".")[0])
            m = self.m[name]
            v = self.v[name]
            m *= self.beta_1
            m += (1.0 - self.beta_1) * g
            v *= self.beta_2
            v += (1.0 - self.beta_2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def adam_step(state: Adam, gradients: Mapping[str, np.ndarray], lr: float | None = None):
    state.step(gradients, lr)
    return state.params
