"""AdamW with decoupled weight decay and the polynomial LR schedule."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor


def poly_lr(step: int, total: int, base_lr: float, power: float = 1.0) -> float:
    """base_lr * (1 - step/total)^power; linear decay at power 1."""
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside [0, {total}]")
    return base_lr * (1.0 - step / total) ** power


class AdamW:
    """Adam with decoupled weight decay over named parameter tensors."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        base_lr: float,
        weight_decay: float,
        total_iters: int,
        poly_power: float = 1.0,
    ):
        if base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if total_iters <= 0:
            raise ConfigError("total_iters must be positive")
        self.named_params = list(named_params)
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.total_iters = total_iters
        self.poly_power = poly_power
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for _, p in self.named_params]
        self._v = [np.zeros_like(p.data) for _, p in self.named_params]

    @property
    def lr(self) -> float:
        """Learning rate the next step() will apply."""
        return poly_lr(self.step_count, self.total_iters, self.base_lr, self.poly_power)

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        if self.step_count >= self.total_iters:
            raise ConfigError("optimizer stepped past total_iters")
        lr = self.lr
        t = self.step_count + 1
        bc1 = 1.0 - self.BETA1**t
        bc2 = 1.0 - self.BETA2**t
        for (name, p), m, v in zip(self.named_params, self._m, self._v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter '{name}' at step {t}")
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.EPS)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update
        self.step_count += 1
