"""Confusion-matrix metrics and cross-validation splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: marker for a metric whose denominator is zero (never silently 0.0)
UNDEFINED = None


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, pred, truth):
        pred = np.asarray(pred).astype(int)
        truth = np.asarray(truth).astype(int)
        return cls(tp=int(np.sum((pred == 1) & (truth == 1))),
                   fp=int(np.sum((pred == 1) & (truth == 0))),
                   tn=int(np.sum((pred == 0) & (truth == 0))),
                   fn=int(np.sum((pred == 0) & (truth == 1))))


def metrics(c: ConfusionCounts) -> dict:
    """acc/sen/spe/f1; zero-denominator entries come back as UNDEFINED."""
    if c.total == 0:
        raise ValueError("metrics need at least one evaluated sample")

    def ratio(num, den):
        return num / den if den > 0 else UNDEFINED

    return {
        "acc": (c.tp + c.tn) / c.total,
        "sen": ratio(c.tp, c.tp + c.fn),
        "spe": ratio(c.tn, c.tn + c.fp),
        "f1": ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    }


def aggregate(entries: list[dict]) -> dict:
    """mean and population std per metric, skipping UNDEFINED values."""
    out = {}
    for key in ("acc", "sen", "spe", "f1"):
        vals = [e[key] for e in entries if e.get(key) is not UNDEFINED]
        if vals:
            out[key] = (float(np.mean(vals)), float(np.std(vals)))
        else:
            out[key] = (UNDEFINED, UNDEFINED)
    return out


def kfold_split(n: int, k: int, seed: int):
    """Deterministic k-fold partition of range(n); fold sizes differ by <= 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i in range(k):
        test_idx = np.sort(folds[i])
        train_idx = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        out.append((train_idx, test_idx))
    return out
