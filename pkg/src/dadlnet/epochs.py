"""Labeled EEG trials and their 3D grid representation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadlnet.montage import Montage, SCHEME_CHANNELS


@dataclass
class EpochSet:
    """trials x channels x timesteps, binary labels (0 = left, 1 = right hand)."""

    data: np.ndarray
    labels: np.ndarray
    fs: float
    channel_names: list[str]
    subject_id: str = ""
    session_id: str = ""
    trial_ids: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 3:
            raise ValueError(f"epoch data must be 3-d, got shape {self.data.shape}")
        if self.data.shape[1] != len(self.channel_names):
            raise ValueError(
                f"{self.data.shape[1]} channels in data vs "
                f"{len(self.channel_names)} channel names"
            )
        if self.labels.shape != (self.data.shape[0],):
            raise ValueError("labels must be one per trial")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("epoch data contains non-finite samples")
        if self.trial_ids is None:
            self.trial_ids = np.arange(self.data.shape[0])
        else:
            self.trial_ids = np.asarray(self.trial_ids)
            if self.trial_ids.shape != (self.data.shape[0],):
                raise ValueError("trial_ids must be one per trial")

    @property
    def n_trials(self):
        return self.data.shape[0]

    @property
    def n_timesteps(self):
        return self.data.shape[2]


@dataclass
class Grid3D:
    """trials x timesteps x rows x cols spatial grid; unplaced cells are zero."""

    data: np.ndarray
    montage: Montage = None


def map_to_3d(epochs: EpochSet, montage: Montage) -> Grid3D:
    missing = [c for c in epochs.channel_names if c not in montage.placements]
    if missing:
        raise ValueError(f"channels missing from montage: {', '.join(missing)}")
    trials, _, timesteps = epochs.data.shape
    grid = np.zeros((trials, timesteps, montage.rows, montage.cols))
    for idx, name in enumerate(epochs.channel_names):
        r, c = montage.placements[name]
        grid[:, :, r, c] = epochs.data[:, idx, :]
    return Grid3D(grid, montage)


def extract_placed(grid: Grid3D, channel_names, montage: Montage) -> np.ndarray:
    """Inverse of map_to_3d on placed channels (round-trip check helper)."""
    out = np.empty((grid.data.shape[0], len(channel_names), grid.data.shape[1]))
    for idx, name in enumerate(channel_names):
        r, c = montage.placements[name]
        out[:, idx, :] = grid.data[:, :, r, c]
    return out


def window_count(timesteps: int, window_len: int, step: int) -> int:
    return (timesteps - window_len) // step + 1


def slide_windows(epochs: EpochSet, window_len: int, step: int) -> EpochSet:
    """Sliding-window augmentation; windows inherit label and trial id."""
    T = epochs.n_timesteps
    if window_len > T:
        raise ValueError(f"window {window_len} exceeds trial length {T}")
    if step < 1:
        raise ValueError("step must be >= 1")
    n_win = window_count(T, window_len, step)
    offsets = np.arange(n_win) * step
    # trial-major, offset-minor
    out = np.empty((epochs.n_trials * n_win, len(epochs.channel_names), window_len))
    for w, off in enumerate(offsets):
        out[w::n_win] = epochs.data[:, :, off:off + window_len]
    labels = np.repeat(epochs.labels, n_win)
    trial_ids = np.repeat(epochs.trial_ids, n_win)
    return EpochSet(out, labels, epochs.fs, list(epochs.channel_names),
                    epochs.subject_id, epochs.session_id, trial_ids)


def select_channels(epochs: EpochSet, scheme: str) -> EpochSet:
    if scheme == "all":
        return epochs
    if scheme not in SCHEME_CHANNELS:
        raise ValueError(f"unknown channel scheme {scheme!r}")
    wanted = set(SCHEME_CHANNELS[scheme])
    missing = wanted - set(epochs.channel_names)
    if missing:
        raise ValueError(
            f"scheme {scheme}: channels missing from epochs: {', '.join(sorted(missing))}"
        )
    idx = [i for i, c in enumerate(epochs.channel_names) if c in wanted]
    return EpochSet(epochs.data[:, idx, :], epochs.labels, epochs.fs,
                    [epochs.channel_names[i] for i in idx],
                    epochs.subject_id, epochs.session_id, epochs.trial_ids)
