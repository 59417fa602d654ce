"""RMSprop."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Tensor


def rmsprop_step(params: list[np.ndarray], grads: list[np.ndarray], state: list[np.ndarray],
                 lr: float, rho: float = 0.9, eps: float = 1e-7) -> None:
    """In-place update: v <- rho v + (1-rho) g^2;  theta <- theta - lr g / (sqrt(v) + eps)."""
    for theta, g, v in zip(params, grads, state):
        if theta.shape != g.shape or theta.shape != v.shape:
            raise ValueError(f"shape mismatch: param {theta.shape}, grad {g.shape}, state {v.shape}")
        v *= rho
        v += (1.0 - rho) * g * g
        theta -= lr * g / (np.sqrt(v) + eps)


class RMSprop:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-5, rho: float = 0.9, eps: float = 1e-7):
        self.params = list(params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.state = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        rmsprop_step([p.data for p in self.params], grads, self.state, self.lr, self.rho, self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: v for p, v in zip(self.params, self.state)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.params):
            if p.name in state:
                self.state[i] = np.asarray(state[p.name], dtype=p.data.dtype).reshape(p.shape).copy()
