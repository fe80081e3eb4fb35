"""Dataset conversion: raw .mat recordings -> EEG3 epoch files + manifest.

Raw input layout (one .mat file per recording):
    fs    sampling rate, scalar
    chan  channel names, cell array of strings, one per row of x
    x     continuous signal, channels x samples
    t     stimulus onset sample indices (0-based, at the raw rate)
    y     per-trial class codes: 1 = left hand, 2 = right hand; other codes
          (BCIC feet/tongue) are dropped

File naming:
    OpenBMI:  subj<SS>_sess<K>_<phase>.mat, phase in {nonfeedback, feedback}
    BCIC 2a:  A<SS>_<T|E>.mat (T = session 1, E = session 2)
"""

from __future__ import annotations

import glob
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.io import loadmat

from eegconvert import format as fmt
from eegconvert.filters import resample, zero_phase_bandpass, zero_phase_notch

TARGET_FS = 400.0

OPENBMI_RE = re.compile(r"subj(\d+)_sess(\d+)_(nonfeedback|feedback)\.mat$")
BCIC_RE = re.compile(r"A(\d+)_([TE])\.mat$")


@dataclass
class ConversionSpec:
    dataset: str  # 'openbmi' or 'bcic2a'
    input_dir: str
    output_dir: str
    channels: list = None
    band: tuple = None
    notch: float | None = None
    target_fs: float = TARGET_FS
    epoch_window: tuple = (0.0, 4.0)

    def __post_init__(self):
        if self.dataset not in ("openbmi", "bcic2a"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.channels is None:
            self.channels = list(fmt.OPENBMI_CHANNELS if self.dataset ==
                                 "openbmi" else fmt.BCIC2A_CHANNELS)
        if self.band is None:
            self.band = (8.0, 30.0) if self.dataset == "openbmi" \
                else (0.5, 100.0)
        if self.notch is None and self.dataset == "bcic2a":
            self.notch = 50.0
        low, high = self.band
        if not 0 < low < high < self.target_fs / 2:
            raise ValueError(f"band ({low}, {high}) must satisfy "
                             f"low < high < target fs/2 = {self.target_fs / 2}")
        t0, t1 = self.epoch_window
        if not t1 > t0 >= 0:
            raise ValueError("epoch window must be a forward time span")


def _as_str_list(cell):
    return [str(np.asarray(c).item()) if np.asarray(c).shape else str(c)
            for c in np.asarray(cell).ravel()]


def read_raw(path):
    mat = loadmat(path, squeeze_me=False)
    for key in ("fs", "chan", "x", "t", "y"):
        if key not in mat:
            raise ValueError(f"{os.path.basename(path)}: missing key {key!r}")
    return {
        "fs": float(np.asarray(mat["fs"]).item()),
        "chan": _as_str_list(mat["chan"]),
        "x": np.asarray(mat["x"], dtype=np.float64),
        "t": np.asarray(mat["t"], dtype=np.int64).ravel(),
        "y": np.asarray(mat["y"], dtype=np.int64).ravel(),
    }


def preprocess_continuous(raw, spec: ConversionSpec):
    """Select channels, zero-phase filter, resample to the target rate."""
    missing = [c for c in spec.channels if c not in raw["chan"]]
    if missing:
        raise ValueError(f"missing channels: {', '.join(missing)}")
    idx = [raw["chan"].index(c) for c in spec.channels]
    x = raw["x"][idx, :]
    x = zero_phase_bandpass(x, spec.band[0], spec.band[1], raw["fs"])
    if spec.notch:
        x = zero_phase_notch(x, spec.notch, raw["fs"])
    return resample(x, raw["fs"], spec.target_fs)


def extract_epochs(raw, resampled, spec: ConversionSpec):
    """Cut [t0, t1) windows after each onset; returns (data, labels).

    Left/right labels (raw codes 1/2) map to 0/1; other codes are dropped.
    Onsets whose window runs past the recording are dropped as well.
    """
    scale = spec.target_fs / raw["fs"]
    t0, t1 = spec.epoch_window
    start_off = int(round(t0 * spec.target_fs))
    length = int(round((t1 - t0) * spec.target_fs))
    epochs, labels = [], []
    for onset, code in zip(raw["t"], raw["y"]):
        if code not in (1, 2):
            continue
        start = int(round(onset * scale)) + start_off
        if start < 0 or start + length > resampled.shape[1]:
            continue
        epochs.append(resampled[:, start:start + length])
        labels.append(code - 1)
    if not epochs:
        raise ValueError("no usable trials")
    return np.stack(epochs), np.asarray(labels, dtype=np.int64)


def _convert(spec: ConversionSpec, pattern, key_fn, style):
    paths = sorted(glob.glob(os.path.join(spec.input_dir, "*.mat")))
    entries = {}
    errors = []
    placements = fmt.OPENBMI_PLACEMENTS if style == "openbmi" \
        else fmt.BCIC2A_PLACEMENTS
    placements = {c: placements[c] for c in spec.channels if c in placements}
    os.makedirs(spec.output_dir, exist_ok=True)
    next_id = 0
    for path in paths:
        match = pattern.search(os.path.basename(path))
        if not match:
            continue
        key = key_fn(match)
        try:
            raw = read_raw(path)
            resampled = preprocess_continuous(raw, spec)
            data, labels = extract_epochs(raw, resampled, spec)
        except ValueError as exc:
            errors.append(f"{os.path.basename(path)}: {exc}")
            continue
        rel = "{}_{}_{}.eeg3".format(*key)
        fmt.write_epoch_file(os.path.join(spec.output_dir, rel), data, labels,
                             spec.target_fs, spec.channels,
                             subject_id=key[0], session_id=key[1],
                             trial_ids=np.arange(next_id, next_id + len(data)))
        next_id += len(data)
        entries[key] = rel
    if not entries:
        raise ValueError(f"no convertible recordings in {spec.input_dir}"
                         + (f"; errors: {'; '.join(errors)}" if errors else ""))
    fmt.write_montage(os.path.join(spec.output_dir, "montage.txt"), 6, 9,
                      placements)
    manifest_path = os.path.join(spec.output_dir, "manifest.txt")
    fmt.write_manifest(manifest_path, spec.dataset, style, "montage.txt",
                       entries)
    return manifest_path, errors


def convert_openbmi(spec: ConversionSpec):
    """31-channel selection, 8-30 Hz zero-phase bandpass, resample to 400 Hz,
    0-4 s epochs, one file per (subject, session, phase)."""
    if spec.dataset != "openbmi":
        raise ValueError("spec.dataset must be 'openbmi'")
    return _convert(
        spec, OPENBMI_RE,
        lambda m: (f"S{int(m.group(1)):02d}", f"s{int(m.group(2))}",
                   m.group(3)),
        "openbmi")


def convert_bcic2a(spec: ConversionSpec):
    """20-channel selection, 0.5-100 Hz bandpass plus 50 Hz notch, resample
    to 400 Hz, left/right trials only."""
    if spec.dataset != "bcic2a":
        raise ValueError("spec.dataset must be 'bcic2a'")
    return _convert(
        spec, BCIC_RE,
        lambda m: (f"S{int(m.group(1)):02d}",
                   "s1" if m.group(2) == "T" else "s2", "all"),
        "bcic")


def verify(manifest_path):
    """Re-open every referenced file and check consistency.

    Returns (ok, report_lines). Structural damage, fs != 400, or bad labels
    flag the file; trial counts and label balance are reported per file.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    fields, entries = fmt.read_manifest(manifest_path)
    lines = [f"# verify {fields.get('dataset', '?')} "
             f"({len(entries)} epoch files)"]
    ok = True
    for key, rel in sorted(entries.items()):
        tag = "{} {} {}".format(*key)
        try:
            rec = fmt.read_epoch_file(os.path.join(base, rel))
        except (OSError, fmt.FormatError) as exc:
            lines.append(f"FAIL {tag} {rel}: {exc}")
            ok = False
            continue
        problems = []
        if rec["fs"] != TARGET_FS:
            problems.append(f"fs {rec['fs']} != {TARGET_FS}")
        if not np.all(np.isin(rec["labels"], (0, 1))):
            problems.append("labels outside {0, 1}")
        if not np.all(np.isfinite(rec["data"])):
            problems.append("non-finite samples")
        n = len(rec["labels"])
        n_right = int(rec["labels"].sum())
        if problems:
            lines.append(f"FAIL {tag} {rel}: {'; '.join(problems)}")
            ok = False
        else:
            lines.append(f"OK   {tag} {rel}: {n} trials "
                         f"({n - n_right} left / {n_right} right), "
                         f"{rec['data'].shape[2]} timesteps")
    lines.append("PASS" if ok else "FAIL")
    return ok, lines
