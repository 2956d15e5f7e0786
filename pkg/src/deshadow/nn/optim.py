"""Adam optimizer with bias correction.

Only the learning rate is treated as experiment-specific; beta1/beta2/epsilon
default to the standard 0.9 / 0.999 / 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import ParameterStore


@dataclass
class AdamState:
    """First/second moment accumulators for every trainable parameter."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: ParameterStore, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    state = AdamState(learning_rate, beta1, beta2, epsilon)
    for p in params.trainable():
        state.m[p.name] = np.zeros_like(p.data)
        state.v[p.name] = np.zeros_like(p.data)
    return state


def adam_step(params: ParameterStore, state: AdamState, learning_rate: float | None = None) -> None:
    """One in-place Adam update over all non-frozen parameters.

    Frozen parameters are untouched and their moment buffers (if any) are not
    advanced.  Raises :class:`ContractError` if a trainable parameter has no
    populated gradient.
    """
    lr = state.learning_rate if learning_rate is None else learning_rate
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for p in params.trainable():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {p.name!r} has no gradient")
        if p.name not in state.m:
            raise ContractError(f"adam_step: no optimizer state for {p.name!r}")
        g = p.grad
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
