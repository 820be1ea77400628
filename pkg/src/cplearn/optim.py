"""Bias-corrected Adam over the tape tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """Per-parameter moment accumulators, shaped like the parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def for_param(param: Tensor) -> "AdamState":
        return AdamState(m=np.zeros_like(param.data), v=np.zeros_like(param.data))


def adam_update(param: Tensor, grad: np.ndarray, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam step on a single parameter."""
    if grad.shape != param.data.shape:
        raise ValueError(f"adam_update: grad shape {grad.shape} != param shape {param.data.shape}")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    """Adam over a parameter list; skips parameters with no accumulated gradient."""

    params: list[Tensor]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(init=False)

    def __post_init__(self):
        self.states = [AdamState.for_param(p) for p in self.params]

    def step(self) -> None:
        for param, state in zip(self.params, self.states):
            if param.grad is None:
                continue
            adam_update(param, param.grad, state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()
