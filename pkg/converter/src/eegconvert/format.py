"""Writers and readers for the training engine's file formats.

Epoch file layout (little-endian), shared with the engine:
    magic "EEG3" | version u32 | fs f64 | trials u32 | channels u32 |
    timesteps u32 | subject str | session str | channel names (str each) |
    labels u8 x trials | trial ids i64 x trials |
    payload f32 x (trials*channels*timesteps), trial-major
Strings are a u16 byte length followed by UTF-8 bytes.

Manifest and montage files are line-oriented text, also as the engine
documents them.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

EPOCH_MAGIC = b"EEG3"
EPOCH_VERSION = 1


class FormatError(Exception):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _read(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"expected {n} bytes, file ends after {len(buf)}")
    return buf


def _read_str(f) -> str:
    (length,) = struct.unpack("<H", _read(f, 2))
    return _read(f, length).decode("utf-8")


def atomic_write(path, payload: bytes):
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_epoch_file(path, data, labels, fs, channel_names, subject_id="",
                     session_id="", trial_ids=None):
    """data is (trials, channels, timesteps); payload stored as float32."""
    data = np.asarray(data)
    trials, channels, timesteps = data.shape
    labels = np.asarray(labels)
    if labels.shape != (trials,):
        raise ValueError("labels must be one per trial")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    if channels != len(channel_names):
        raise ValueError("channel count does not match channel names")
    if trial_ids is None:
        trial_ids = np.arange(trials)
    parts = [EPOCH_MAGIC, struct.pack("<I", EPOCH_VERSION),
             struct.pack("<d", float(fs)),
             struct.pack("<III", trials, channels, timesteps),
             _pack_str(subject_id), _pack_str(session_id)]
    parts.extend(_pack_str(c) for c in channel_names)
    parts.append(labels.astype(np.uint8).tobytes())
    parts.append(np.asarray(trial_ids).astype("<i8").tobytes())
    parts.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    atomic_write(path, b"".join(parts))


def read_epoch_file(path):
    """Returns a dict with fs, channel_names, subject, session, labels,
    trial_ids, data. Raises FormatError on any inconsistency."""
    with open(path, "rb") as f:
        magic = _read(f, 4)
        if magic != EPOCH_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read(f, 4))
        if version != EPOCH_VERSION:
            raise FormatError(f"unsupported version {version}")
        (fs,) = struct.unpack("<d", _read(f, 8))
        trials, channels, timesteps = struct.unpack("<III", _read(f, 12))
        subject = _read_str(f)
        session = _read_str(f)
        names = [_read_str(f) for _ in range(channels)]
        labels = np.frombuffer(_read(f, trials), dtype=np.uint8)
        trial_ids = np.frombuffer(_read(f, trials * 8), dtype="<i8")
        payload = _read(f, trials * channels * timesteps * 4)
        if f.read(1):
            raise FormatError("trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(trials, channels,
                                                       timesteps)
    return {"fs": fs, "channel_names": names, "subject": subject,
            "session": session, "labels": labels.astype(np.int64),
            "trial_ids": trial_ids.copy(), "data": data}


def write_manifest(path, dataset, style, montage_rel, entries):
    """entries maps (subject, session, phase) -> relative epoch-file path."""
    lines = [f"dataset = {dataset}", f"style = {style}",
             f"montage = {montage_rel}"]
    for (subject, session, phase), rel in sorted(entries.items()):
        lines.append(f"epoch {subject} {session} {phase} {rel}")
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path):
    fields = {}
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("epoch "):
                parts = line.split()
                entries[tuple(parts[1:4])] = parts[4]
            elif "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                fields[k] = v
    return fields, entries


def write_montage(path, rows, cols, placements):
    lines = ["# channel row col", f"rows={rows}", f"cols={cols}"]
    lines.extend(f"{name} {r} {c}" for name, (r, c) in placements.items())
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


# 31 motor-region channels (OpenBMI) and their 6x9 grid cells
OPENBMI_CHANNELS = [
    "FC5", "FC3", "FC1", "FC2", "FC4", "FC6",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8",
    "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8",
    "P7", "P3", "P1", "Pz", "P2", "P4", "P8",
]
OPENBMI_PLACEMENTS = {
    "FC5": (0, 1), "FC3": (0, 2), "FC1": (0, 3),
    "FC2": (0, 5), "FC4": (0, 6), "FC6": (0, 7),
    "T7": (1, 0), "C5": (1, 1), "C3": (1, 2), "C1": (1, 3), "Cz": (1, 4),
    "C2": (2, 5), "C4": (2, 6), "C6": (2, 7), "T8": (2, 8),
    "TP7": (3, 0), "CP5": (3, 1), "CP3": (3, 2), "CP1": (3, 3), "CPz": (3, 4),
    "CP2": (4, 5), "CP4": (4, 6), "CP6": (4, 7), "TP8": (4, 8),
    "P7": (5, 0), "P3": (5, 2), "P1": (5, 3), "Pz": (5, 4),
    "P2": (5, 5), "P4": (5, 6), "P8": (5, 8),
}

# 20-channel BCIC IV 2a motor-strip subset (10-20 approximation) on the
# same 6x9 grid
BCIC2A_CHANNELS = [
    "FC3", "FC1", "FCz", "FC2", "FC4",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP3", "CP1", "CPz", "CP2", "CP4",
    "P1", "Pz", "P2",
]
BCIC2A_PLACEMENTS = {
    "FC3": (0, 2), "FC1": (0, 3), "FCz": (0, 4), "FC2": (0, 5), "FC4": (0, 6),
    "C5": (1, 1), "C3": (1, 2), "C1": (1, 3), "Cz": (1, 4),
    "C2": (2, 5), "C4": (2, 6), "C6": (2, 7),
    "CP3": (3, 2), "CP1": (3, 3), "CPz": (3, 4),
    "CP2": (4, 5), "CP4": (4, 6),
    "P1": (5, 3), "Pz": (5, 4), "P2": (5, 5),
}
