"""SGD with momentum/weight decay and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class Schedule:
    """Step schedule: lr is multiplied by `factor` at each step epoch.

    Defaults reproduce the training recipe: initial 0.01 with steps at
    epochs 50, 90 and 110 (factor 0.1) over 120 epochs.
    """

    initial_lr: float = 0.01
    step_epochs: tuple[int, ...] = (50, 90, 110)
    factor: float = 0.1
    total_epochs: int = 120

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.step_epochs if epoch >= e)
        return self.initial_lr * self.factor ** drops


def lr_at(epoch: int, schedule: Schedule) -> float:
    return schedule.lr_at(epoch)


class SGD:
    """v <- momentum*v + grad + weight_decay*param; param <- param - lr*v."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 0.01,
                 momentum: float = 0.9, weight_decay: float = 0.0005):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {
            name: np.zeros_like(p.data) for name, p in self.params
        }

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        for name, p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient; run backward first")
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data = p.data - self.lr * v

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.velocity):
            raise ValueError("optimizer state does not match parameter set")
        for name, v in state.items():
            if v.shape != self.velocity[name].shape:
                raise ValueError(f"momentum shape mismatch for {name!r}")
            self.velocity[name] = v.astype(self.velocity[name].dtype, copy=True)
