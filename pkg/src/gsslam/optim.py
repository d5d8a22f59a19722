"""Adaptive-moment gradient descent over named numpy parameter groups."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lrs: dict[str, float], betas=(0.9, 0.999), eps: float = 1e-8):
        self.lrs = dict(lrs)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps = 0

    def reset(self) -> None:
        self.m.clear()
        self.v.clear()
        self.steps = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_scale: float = 1.0) -> dict[str, np.ndarray]:
        """Return updated copies of ``params``; groups without a gradient are left alone."""
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.steps
        bc2 = 1.0 - b2 ** self.steps
        out = dict(params)
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None or m.shape != g.shape:
                m = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            step = self.lrs[name] * lr_scale * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            out[name] = params[name] - step
        return out
