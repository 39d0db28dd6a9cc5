"""Adaptive-moment (Adam) updates over named parameter arrays."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with per-group learning rates.

    Parameters are updated in place.  ``lr`` may be a float or a dict keyed by
    parameter name; :meth:`set_lr` changes a group's rate between steps.
    """

    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.lr = dict(lr) if isinstance(lr, dict) else {k: float(lr) for k in params}
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def set_lr(self, name: str, lr: float) -> None:
        self.lr[name] = float(lr)

    def step(self, grads: dict) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr[name] * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def rebind(self, params: dict, keep=None, n_new: int = 0) -> None:
        """Point the optimizer at resized arrays after densification or pruning.

        Rows selected by ``keep`` retain their moments; ``n_new`` appended rows
        start from zero.
        """
        for name in params:
            m, v = self.m[name], self.v[name]
            if keep is not None:
                m, v = m[keep], v[keep]
            if n_new:
                pad = np.zeros((n_new,) + m.shape[1:], dtype=m.dtype)
                m, v = np.concatenate([m, pad]), np.concatenate([v, pad])
            self.m[name], self.v[name] = m, v
        self.params = params
