"""RMSprop and the plateau learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

RMSPROP_EPS = 1e-8


def rmsprop_init(params) -> dict:
    """Zeroed squared-gradient accumulators, one per trainable tensor."""
    return {name: np.zeros_like(t) for name, t in params.tensors.items()}


def rmsprop_step(params, grads: dict, state: dict, lr: float, rho: float = 0.9):
    """In-place update: s <- rho s + (1-rho) g^2; w <- w - lr g / (sqrt(s) + eps).

    Tensors without a gradient entry are left untouched. Bumps
    params.version so stale forward caches are detectable.
    """
    for name, g in grads.items():
        s = state[name]
        g = np.asarray(g, dtype=s.dtype)
        s *= rho
        s += (1.0 - rho) * g * g
        params.tensors[name] -= lr * g / (np.sqrt(s) + RMSPROP_EPS)
    params.version += 1
    return params


class PlateauDecay:
    """Multiply lr by `factor` after `patience` consecutive epochs without
    validation-loss improvement; never below `min_lr`. The stale counter
    resets on decay and on improvement."""

    def __init__(
        self,
        lr: float = 1e-3,
        factor: float = math.sqrt(0.1),
        patience: int = 5,
        min_lr: float = 0.5e-6,
    ):
        if not 0.0 < factor < 1.0:
            raise ValueError("decay factor must lie in (0, 1)")
        if not min_lr < lr:
            raise ValueError("min_lr must be below the initial lr")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.stale = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the lr to use next."""
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.stale = 0
        return self.lr
