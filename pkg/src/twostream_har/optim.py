"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import StateError
from .tensor import Tensor


@dataclass
class AdamState:
    """Moment estimates for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: Tensor) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), 0)


def adam_step(
    params: Sequence[Tensor],
    states: Sequence[AdamState],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Update ``params`` in place from their ``grad`` and zero the grads."""
    if len(params) != len(states):
        raise StateError(f"adam_step: {len(params)} params but {len(states)} states")
    for i, (p, s) in enumerate(zip(params, states)):
        if p.grad is None:
            raise StateError(f"adam_step: parameter {i} with shape {p.shape} has no gradient")
        if s.m.shape != p.data.shape or s.v.shape != p.data.shape:
            raise StateError(f"adam_step: state {i} does not match parameter shape {p.shape}")
    for p, s in zip(params, states):
        g = p.grad
        s.t += 1
        s.m *= beta1
        s.m += (1.0 - beta1) * g
        s.v *= beta2
        s.v += (1.0 - beta2) * g * g
        m_hat = s.m / (1.0 - beta1**s.t)
        v_hat = s.v / (1.0 - beta2**s.t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None


@dataclass
class Adam:
    params: list
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list = field(default_factory=list)

    def __post_init__(self):
        self.params = list(self.params)
        if not self.states:
            self.states = [AdamState.zeros_like(p) for p in self.params]

    def step(self) -> None:
        adam_step(self.params, self.states, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
