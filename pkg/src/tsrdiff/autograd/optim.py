from __future__ import annotations

import numpy as np

from .core import Parameter


class Adam:
    """Adam without weight decay. Frozen parameters are never touched."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for p in self.params:
            if not p.trainable or p.grad is None:
                continue
            m = self.m[p.name] = b1 * self.m[p.name] + (1.0 - b1) * p.grad
            v = self.v[p.name] = b2 * self.v[p.name] + (1.0 - b2) * p.grad * p.grad
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], step_count: int) -> None:
        for p in self.params:
            self.m[p.name] = state[f"adam.m.{p.name}"].copy()
            self.v[p.name] = state[f"adam.v.{p.name}"].copy()
        self.step_count = step_count
