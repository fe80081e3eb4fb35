"""Synthetic raw-recording builders shared by the converter tests."""

import os

import numpy as np
from scipy.io import savemat

from eegconvert import format as fmt


def write_raw(path, fs, channels, codes, spacing_s=4.3, lead_s=0.3, seed=0,
              tone_hz=12.0):
    """Synthetic continuous recording: noise plus an in-band tone on C3."""
    rng = np.random.default_rng(seed)
    n = len(codes)
    total = int((lead_s + n * spacing_s + 4.5) * fs)
    x = 0.5 * rng.normal(size=(len(channels), total))
    t_axis = np.arange(total) / fs
    if "C3" in channels:
        x[channels.index("C3")] += np.sin(2 * np.pi * tone_hz * t_axis)
    onsets = (lead_s * fs + np.arange(n) * spacing_s * fs).astype(np.int64)
    savemat(path, {"fs": float(fs),
                   "chan": np.array(channels, dtype=object),
                   "x": x, "t": onsets,
                   "y": np.asarray(codes, dtype=np.int64)})
    return onsets


def openbmi_tree(tmp_path, trials=6, subjects=("01",), sessions=("1",),
                 phases=("nonfeedback", "feedback")):
    raw_dir = tmp_path / "raw"
    raw_dir.mkdir(exist_ok=True)
    codes = ([1, 2] * ((trials + 1) // 2))[:trials]
    seed = 0
    for subj in subjects:
        for sess in sessions:
            for phase in phases:
                write_raw(raw_dir / f"subj{subj}_sess{sess}_{phase}.mat",
                          1000.0, fmt.OPENBMI_CHANNELS, codes, seed=seed)
                seed += 1
    return str(raw_dir)
