"""ADAM optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError
from .tensor import DTYPE


class AdamState:
    """Per-parameter first/second moment buffers plus a shared step counter.

    Defaults follow the standard settings: beta1=0.9, beta2=0.999, eps=1e-8,
    learning rate 1e-4.
    """

    def __init__(self, params, learning_rate=1e-4, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adam_step(state: AdamState) -> None:
    """Apply one ADAM update to every parameter in ``state``.

    Raises ``NumericsError`` naming the parameter if a gradient contains
    NaN or Inf.  Parameters without a gradient buffer are skipped.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    lr, eps = state.learning_rate, state.epsilon

    for i, p in enumerate(state.params):
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericsError(
                f"non-finite gradient for parameter {p.name or f'#{i}'}")
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(DTYPE)
