"""Bias-corrected adaptive-moment optimizer over ParamTensors."""

from __future__ import annotations

import numpy as np


class AdamState:
    """First/second moment buffers keyed by parameter name, plus step count."""

    def __init__(self):
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def buffers(self, p):
        if p.name not in self.m:
            self.m[p.name] = np.zeros_like(p.values)
            self.v[p.name] = np.zeros_like(p.values)
        return self.m[p.name], self.v[p.name]


def adam_step(params, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """Apply one update in place; returns False (step skipped, nothing
    mutated) if any gradient is non-finite."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            return False
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p in params:
        m, v = state.buffers(p)
        m *= beta1
        m += (1.0 - beta1) * p.grad
        v *= beta2
        v += (1.0 - beta2) * p.grad * p.grad
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return True
