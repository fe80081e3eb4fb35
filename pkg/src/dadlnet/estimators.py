"""Scikit-learn style estimator wrapping the training pipeline."""

from __future__ import annotations

import numpy as np

from dadlnet.epochs import EpochSet, map_to_3d
from dadlnet.model import build, desk_config
from dadlnet.train import TrainConfig, predict_probs, pretrain


def _check_arrays(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"X must be (trials, channels, timesteps), got "
                         f"shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if y is None:
        return X, None
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValueError(f"y shape {y.shape} does not match {X.shape[0]} trials")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("y must contain only 0 and 1")
    return X, y.astype(np.int64)


class DADLNetClassifier:
    """Binary EEG classifier with a fit/predict interface.

    X is (trials, channels, timesteps); channel order must match
    `channel_names`, which the montage places on the scalp grid.
    """

    def __init__(self, montage=None, channel_names=None, fs=128.0,
                 config=None, lr=0.001, batch_size=32, max_epochs=100,
                 patience=30, validation_fraction=0.2, seed=0):
        self.montage = montage
        self.channel_names = channel_names
        self.fs = fs
        self.config = config
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    _param_names = ("montage", "channel_names", "fs", "config", "lr",
                    "batch_size", "max_epochs", "patience",
                    "validation_fraction", "seed")

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"unknown parameter {name!r}; valid: "
                                 f"{', '.join(self._param_names)}")
            setattr(self, name, value)
        return self

    def _require_setup(self):
        if self.montage is None or self.channel_names is None:
            raise ValueError("montage and channel_names must be set before fit")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must lie in (0, 1)")

    def fit(self, X, y):
        self._require_setup()
        X, y = _check_arrays(X, y)
        if len(np.unique(y)) < 2:
            raise ValueError("fit needs both classes present")
        epochs = EpochSet(X, y, self.fs, list(self.channel_names))
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(epochs.n_trials)
        cut = max(int((1 - self.validation_fraction) * len(order)), 1)
        pick = lambda idx: EpochSet(X[idx], y[idx], self.fs,
                                    list(self.channel_names),
                                    trial_ids=epochs.trial_ids[idx])
        cfg = self.config or desk_config(self.fs)
        train_cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size,
                                max_epochs=self.max_epochs,
                                patience=self.patience, seed=self.seed)
        params = build(cfg, (X.shape[2], self.montage.rows, self.montage.cols),
                       seed=self.seed)
        self.params_, self.history_ = pretrain(
            params, self.montage, pick(order[:cut]), pick(order[cut:]),
            train_cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValueError("estimator is not fitted; call fit first")

    def predict_proba(self, X):
        self._check_fitted()
        X, _ = _check_arrays(X)
        epochs = EpochSet(X, np.zeros(X.shape[0], dtype=int), self.fs,
                          list(self.channel_names))
        p1 = predict_probs(self.params_, map_to_3d(epochs, self.montage).data)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def score(self, X, y):
        _, y = _check_arrays(X, y)
        return float((self.predict(X) == y).mean())
