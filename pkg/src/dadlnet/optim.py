"""Nadam optimizer and validation-loss early stopping."""

from __future__ import annotations

import numpy as np


class Nadam:
    """Nesterov-Adam over a dict of named tensors (optionally a subset)."""

    def __init__(self, tensors, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8,
                 names=None):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        self.tensors = tensors
        self.names = list(names) if names is not None else list(tensors)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {
            n: {"m": np.zeros_like(tensors[n].data),
                "v": np.zeros_like(tensors[n].data),
                "t": 0}
            for n in self.names
        }

    def step(self):
        b1, b2 = self.beta1, self.beta2
        for name in self.names:
            t = self.tensors[name]
            if t.grad is None:
                continue
            g = t.grad
            st = self.state[name]
            if g.shape != st["m"].shape:
                raise ValueError(f"{name}: grad shape {g.shape} != state shape "
                                 f"{st['m'].shape}")
            st["t"] += 1
            k = st["t"]
            st["m"] = b1 * st["m"] + (1 - b1) * g
            st["v"] = b2 * st["v"] + (1 - b2) * g * g
            m_hat = st["m"] / (1 - b1 ** k)
            v_hat = st["v"] / (1 - b2 ** k)
            update = (b1 * m_hat + (1 - b1) * g / (1 - b1 ** k)) \
                / (np.sqrt(v_hat) + self.eps)
            t.data = t.data - self.lr * update

    def zero_grad(self):
        for name in self.names:
            self.tensors[name].grad = None


class EarlyStopper:
    """Stops after `patience` epochs without validation-loss improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best_val_loss = np.inf
        self.epochs_since_improve = 0
        self.best_snapshot = None

    def update(self, val_loss: float, snapshot) -> bool:
        """Record one epoch; returns True when training should stop.

        `snapshot` is a zero-argument callable producing a restorable copy of
        the current parameters; it is only invoked on improvement.
        """
        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.epochs_since_improve = 0
            self.best_snapshot = snapshot()
            return False
        self.epochs_since_improve += 1
        return self.epochs_since_improve >= self.patience
