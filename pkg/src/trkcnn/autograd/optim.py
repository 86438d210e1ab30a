"""Adam and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.state = AdamState(
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
            learning_rate=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
        )

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float):
        self.state.learning_rate = value

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_update(self.params, self.state)


def adam_update(params: Sequence[Tensor], state: AdamState):
    """One bias-corrected Adam step; gradients are read from ``param.grad``.

    Parameters whose ``grad`` is None are left untouched.
    """
    if len(state.first_moment) != len(params):
        raise ValueError("Adam state does not match parameter list")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        if p.grad is None:
            continue
        g = p.grad
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data = (p.data - update).astype(p.data.dtype)
    return params


@dataclass
class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without
    a strict improvement of the monitored loss."""

    learning_rate: float = 1e-4
    patience: int = 10
    factor: float = 0.5
    best_loss: float = math.inf
    epochs_since_improvement: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be a positive integer")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")

    def step(self, validation_loss: float) -> float:
        if validation_loss < self.best_loss:
            self.best_loss = validation_loss
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
            if self.epochs_since_improvement >= self.patience:
                self.learning_rate *= self.factor
                self.epochs_since_improvement = 0
        self.history.append(self.learning_rate)
        return self.learning_rate


def plateau_step(schedule: PlateauSchedule, validation_loss: float) -> float:
    return schedule.step(validation_loss)
