"""Synthetic desk-scale EEG: lateralized 10 Hz bandpower on pink noise.

Class 0 amplifies the 10 Hz component on left-hemisphere channels (odd 10-20
suffix), class 1 on right-hemisphere channels (even suffix). Per-subject
domain shift applies a random channel gain and a sinusoid phase offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadlnet.epochs import EpochSet
from dadlnet.montage import OPENBMI_CHANNELS


@dataclass
class SynthConfig:
    n_subjects: int = 2
    trials: int = 100
    channels: list[str] = field(default_factory=lambda: list(OPENBMI_CHANNELS))
    fs: float = 128.0
    T: int = 128
    class_gap: float = 2.0
    domain_shift: float = 0.0
    seed: int = 0


def hemisphere(channel: str) -> str:
    """'left', 'right', or 'mid' by 10-20 naming (odd = left, even = right)."""
    tail = channel[-1]
    if tail in "zZ":
        return "mid"
    digit = int(tail)
    return "left" if digit % 2 == 1 else "right"


def _pink_noise(rng, shape, n_samples):
    """1/f-shaped noise along the last axis, unit-ish variance."""
    n_bins = n_samples // 2 + 1
    spectrum = rng.standard_normal(shape + (n_bins,)) + \
        1j * rng.standard_normal(shape + (n_bins,))
    freqs = np.arange(n_bins, dtype=np.float64)
    freqs[0] = 1.0
    spectrum /= np.sqrt(freqs)
    out = np.fft.irfft(spectrum, n=n_samples, axis=-1)
    return out / out.std()


def _subject_params(cfg: SynthConfig, subject: int):
    """Per-subject domain-shift parameters, stable across sessions."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7919, subject]))
    gains = np.exp(cfg.domain_shift * rng.standard_normal(len(cfg.channels)))
    chan_phase = cfg.domain_shift * rng.uniform(0, np.pi, len(cfg.channels))
    return gains, chan_phase


def synth_epochs(cfg: SynthConfig, subject: int, stream: int = 0,
                 subject_id: str = "", session_id: str = "") -> EpochSet:
    """One balanced EpochSet for one subject; `stream` varies the noise draw."""
    if cfg.trials % 2 != 0:
        raise ValueError("trials must be even so classes balance exactly")
    if cfg.class_gap < 0:
        raise ValueError("class_gap must be >= 0")
    n_ch = len(cfg.channels)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, subject, stream]))
    gains, chan_phase = _subject_params(cfg, subject)

    labels = np.repeat([0, 1], cfg.trials // 2)
    rng.shuffle(labels)

    t = np.arange(cfg.T) / cfg.fs
    side = np.array([hemisphere(c) for c in cfg.channels])
    data = _pink_noise(rng, (cfg.trials, n_ch), cfg.T)
    for i in range(cfg.trials):
        amp = np.ones(n_ch)
        boost = "left" if labels[i] == 0 else "right"
        amp[side == boost] += cfg.class_gap
        trial_phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * 10.0 * t[None, :] + trial_phase
                      + chan_phase[:, None])
        data[i] += amp[:, None] * wave
    data *= gains[:, None]
    return EpochSet(data, labels, cfg.fs, list(cfg.channels),
                    subject_id or f"S{subject:02d}", session_id)


def synth_generate(cfg: SynthConfig) -> list[EpochSet]:
    """One EpochSet per subject, deterministic in cfg.seed."""
    return [synth_epochs(cfg, s) for s in range(cfg.n_subjects)]


def bandpower_feature(epochs: EpochSet, band=(8.0, 12.0)) -> np.ndarray:
    """Per-trial mean(left bandpower) - mean(right bandpower)."""
    spec = np.abs(np.fft.rfft(epochs.data, axis=2)) ** 2
    freqs = np.fft.rfftfreq(epochs.n_timesteps, 1.0 / epochs.fs)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    bp = spec[:, :, in_band].mean(axis=2)
    side = np.array([hemisphere(c) for c in epochs.channel_names])
    left = bp[:, side == "left"].mean(axis=1)
    right = bp[:, side == "right"].mean(axis=1)
    return left - right


def bandpower_oracle_accuracy(train: EpochSet, test: EpochSet | None = None) -> float:
    """Threshold classifier on the lateralized-bandpower feature.

    Fits the threshold as the midpoint of class-conditional means on `train`
    and scores on `test` (or on `train` itself). This is the independent
    separability floor any trained model should reach on synthetic data.
    """
    test = test or train
    f_train = bandpower_feature(train)
    mu0 = f_train[train.labels == 0].mean()
    mu1 = f_train[train.labels == 1].mean()
    thresh = (mu0 + mu1) / 2
    f_test = bandpower_feature(test)
    pred = np.where(f_test > thresh, 0, 1) if mu0 > mu1 else \
        np.where(f_test > thresh, 1, 0)
    return float((pred == test.labels).mean())
