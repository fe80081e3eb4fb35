"""Binary epoch files, checkpoints, manifests, configs, and run directories.

Epoch file layout (little-endian):
    magic "EEG3" | version u32 | fs f64 | trials u32 | channels u32 |
    timesteps u32 | subject str | session str | channel names (str each) |
    labels u8 x trials | trial ids i64 x trials |
    payload f32 x (trials*channels*timesteps), trial-major
Strings are a u16 byte length followed by UTF-8 bytes.

Checkpoint layout:
    magic "DADL" | version u32 | config JSON (u32 length + bytes) |
    record count u32 | records: name str | ndim u8 | dims u32 each | f64 data
"""

from __future__ import annotations

import configparser
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from dadlnet.epochs import EpochSet

#: refuse epoch files declaring more samples than this (8 GiB of payload)
MAX_SAMPLES = 1 << 31

EPOCH_MAGIC = b"EEG3"
EPOCH_VERSION = 1
CKPT_MAGIC = b"DADL"
CKPT_VERSION = 1


class EpochFileError(Exception):
    """Base for malformed epoch or checkpoint files."""


class MagicError(EpochFileError):
    pass


class VersionError(EpochFileError):
    pass


class TruncatedError(EpochFileError):
    pass


class DimError(EpochFileError):
    """Declared dimensions do not match the available payload."""


def _read(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"expected {n} bytes, file ends after {len(buf)}")
    return buf


def _read_str(f):
    (length,) = struct.unpack("<H", _read(f, 2))
    return _read(f, length).decode("utf-8")


def _pack_str(s):
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long to encode: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw


def atomic_write(path, payload: bytes):
    """Write via a temp file in the same directory plus rename, so a failed
    write never leaves a partial file at the destination."""
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


def save_epochs(epochs: EpochSet, path):
    parts = [EPOCH_MAGIC, struct.pack("<I", EPOCH_VERSION),
             struct.pack("<d", epochs.fs),
             struct.pack("<III", epochs.n_trials, len(epochs.channel_names),
                         epochs.n_timesteps),
             _pack_str(epochs.subject_id), _pack_str(epochs.session_id)]
    parts.extend(_pack_str(c) for c in epochs.channel_names)
    parts.append(epochs.labels.astype(np.uint8).tobytes())
    parts.append(epochs.trial_ids.astype("<i8").tobytes())
    parts.append(np.ascontiguousarray(epochs.data, dtype="<f4").tobytes())
    atomic_write(path, b"".join(parts))


def load_epochs(path) -> EpochSet:
    with open(path, "rb") as f:
        magic = _read(f, 4)
        if magic != EPOCH_MAGIC:
            raise MagicError(f"bad magic {magic!r}, expected {EPOCH_MAGIC!r}")
        (version,) = struct.unpack("<I", _read(f, 4))
        if version != EPOCH_VERSION:
            raise VersionError(f"unsupported epoch file version {version}")
        (fs,) = struct.unpack("<d", _read(f, 8))
        trials, channels, timesteps = struct.unpack("<III", _read(f, 12))
        subject = _read_str(f)
        session = _read_str(f)
        names = [_read_str(f) for _ in range(channels)]
        samples = trials * channels * timesteps
        if samples > MAX_SAMPLES:
            raise DimError(
                f"dims ({trials},{channels},{timesteps}) declare {samples} "
                f"samples, above the {MAX_SAMPLES} limit")
        labels = np.frombuffer(_read(f, trials), dtype=np.uint8).astype(np.int64)
        trial_ids = np.frombuffer(_read(f, trials * 8), dtype="<i8")
        raw = _read(f, trials * channels * timesteps * 4)
        data = np.frombuffer(raw, dtype="<f4").reshape(trials, channels,
                                                       timesteps)
    return EpochSet(data, labels, fs, names, subject, session,
                    trial_ids.copy())


def save_checkpoint(path, config: dict, named_arrays):
    """config is any JSON-serializable dict; named_arrays yields
    (name, float array) pairs stored as raw 64-bit values."""
    records = list(named_arrays)
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.asarray(arr, dtype="<f8")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(np.ascontiguousarray(arr).tobytes())
    atomic_write(path, b"".join(parts))


def load_checkpoint(path):
    """Returns (config dict, name -> float64 array)."""
    with open(path, "rb") as f:
        magic = _read(f, 4)
        if magic != CKPT_MAGIC:
            raise MagicError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read(f, 4))
        if version != CKPT_VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", _read(f, 4))
        config = json.loads(_read(f, blob_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read(f, 4))
        arrays = {}
        for _ in range(count):
            name = _read_str(f)
            (ndim,) = struct.unpack("<B", _read(f, 1))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(_read(f, n * 8),
                                         dtype="<f8").reshape(shape).copy()
    return config, arrays


def model_config_dict(params) -> dict:
    cfg = params.config
    return {
        "fs": cfg.fs,
        "temporal_kernel_fraction": cfg.temporal_kernel_fraction,
        "spatial_kernels": [list(k) for k in cfg.spatial_kernels],
        "spatial_strides": [list(s) for s in cfg.spatial_strides],
        "filters": list(cfg.filters),
        "temporal_kernels": list(cfg.temporal_kernels),
        "temporal_pools": list(cfg.temporal_pools),
        "dropout_p": cfg.dropout_p,
        "se_ratio": cfg.se_ratio,
        "input_shape": list(params.input_shape),
    }


def save_model_checkpoint(path, params, head=None, extra=None):
    """Model parameters plus an optional adaptation head in one container.
    Head records carry a 'dda.' prefix; source indices live in their names."""
    config = {"model": model_config_dict(params)}
    if head is not None:
        config["dda"] = {"num_sources": head.num_sources,
                         "feature_dim": head.feature_dim,
                         "buffer_dim": head.buffer_dim,
                         "adapter_dim": head.adapter_dim}
    if extra:
        config["extra"] = extra
    records = list(params.named_arrays())
    if head is not None:
        records.extend(("dda." + n, a) for n, a in head.named_arrays())
    save_checkpoint(path, config, records)


def load_model_checkpoint(path):
    """Returns (params, head or None, config). Rebuilds from the stored
    config and restores every value bit-exactly."""
    from dadlnet.dda import build_dda
    from dadlnet.model import DADLNetConfig, build

    config, arrays = load_checkpoint(path)
    mc = dict(config["model"])
    input_shape = tuple(mc.pop("input_shape"))
    mc["spatial_kernels"] = [tuple(k) for k in mc["spatial_kernels"]]
    mc["spatial_strides"] = [tuple(s) for s in mc["spatial_strides"]]
    params = build(DADLNetConfig(**mc), input_shape)
    params.load_arrays({n: a for n, a in arrays.items()
                        if not n.startswith("dda.")})
    head = None
    if "dda" in config:
        dc = config["dda"]
        head = build_dda(dc["num_sources"], dc["feature_dim"],
                         dc["buffer_dim"], dc["adapter_dim"])
        head.load_arrays({n[len("dda."):]: a for n, a in arrays.items()
                          if n.startswith("dda.")})
    return params, head, config


@dataclass
class Manifest:
    dataset: str
    style: str
    montage_path: str
    entries: dict = field(default_factory=dict)  # (subject, session, phase) -> path


def save_manifest(manifest: Manifest, path):
    lines = [f"dataset = {manifest.dataset}",
             f"style = {manifest.style}",
             f"montage = {manifest.montage_path}"]
    for (subject, session, phase), rel in sorted(manifest.entries.items()):
        lines.append(f"epoch {subject} {session} {phase} {rel}")
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_manifest(path) -> Manifest:
    base = os.path.dirname(os.path.abspath(path))
    fields = {}
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("epoch "):
                parts = line.split()
                if len(parts) != 5:
                    raise ValueError(f"{path}:{lineno}: epoch lines need "
                                     "subject, session, phase, and path")
                key = tuple(parts[1:4])
                if key in entries:
                    raise ValueError(f"{path}:{lineno}: duplicate entry {key}")
                entries[key] = parts[4]
            elif "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                fields[k] = v
            else:
                raise ValueError(f"{path}:{lineno}: unparseable line {line!r}")
    for want in ("dataset", "style", "montage"):
        if want not in fields:
            raise ValueError(f"{path}: missing '{want}' field")
    manifest = Manifest(fields["dataset"], fields["style"], fields["montage"],
                        entries)
    for key, rel in [(("montage",), manifest.montage_path)] + list(entries.items()):
        full = os.path.join(base, rel)
        if not os.path.exists(full):
            raise ValueError(f"{path}: referenced file not found: {rel}")
    return manifest


def load_dataset(manifest_path):
    """Manifest -> protocols.Dataset with all epoch files loaded."""
    from dadlnet.montage import load_montage
    from dadlnet.protocols import Dataset

    manifest = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    montage = load_montage(os.path.join(base, manifest.montage_path))
    entries = {}
    for (subject, session, phase), rel in manifest.entries.items():
        eset = load_epochs(os.path.join(base, rel))
        eset.subject_id, eset.session_id = subject, session
        entries[(subject, session, phase)] = eset
    ids = np.concatenate([e.trial_ids for e in entries.values()])
    if len(np.unique(ids)) != len(ids):
        raise ValueError(f"{manifest_path}: trial ids are not globally unique")
    return Dataset(manifest.dataset, manifest.style, entries, montage)


def parse_config_file(path) -> dict:
    """[section] / key = value text file -> nested dict of raw strings."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path, "r", encoding="utf-8") as f:
        parser.read_file(f, source=path)
    return {section: dict(parser.items(section))
            for section in parser.sections()}


def write_config_file(path, sections: dict):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, values in sections.items():
        parser[section] = {k: json.dumps(v) if not isinstance(v, str) else v
                           for k, v in values.items()}
    import io as _io
    buf = _io.StringIO()
    parser.write(buf)
    atomic_write(path, buf.getvalue().encode("utf-8"))


def coerce_config(raw: dict, schema: dict, source="config") -> dict:
    """Typed values from raw strings; unknown keys fail listing valid ones."""
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise ValueError(f"{source}: unknown key {key!r}; valid keys: "
                             f"{', '.join(sorted(schema))}")
        kind = schema[key]
        out[key] = value if kind is str else kind(json.loads(value))
    return out


def format_history(history) -> str:
    lines = [f"{h['epoch']} {h['split']} {h['loss']:.6f} {h['acc']:.4f}"
             for h in history]
    return "\n".join(lines) + ("\n" if lines else "")


def _fmt(v):
    return "undef" if v is None else f"{v:.4f}"


def format_report(report, title) -> str:
    """Tabular text: one row per (subject, fold), then a mean +/- std summary.
    Std uses the population formula over per-subject means."""
    lines = [f"# {title}", f"# protocol: {report.protocol}",
             "# std: population formula over subjects",
             "subject fold acc sen spe f1"]
    for row in report.rows:
        lines.append(f"{row['subject']} {row['fold']} {_fmt(row['acc'])} "
                     f"{_fmt(row['sen'])} {_fmt(row['spe'])} {_fmt(row['f1'])}")
    lines.append("# summary (mean +/- std over subjects)")
    for key in ("acc", "sen", "spe", "f1"):
        mean, std = report.summary[key]
        if mean is None:
            lines.append(f"{key} undef")
        else:
            lines.append(f"{key} {mean:.4f} +/- {std:.4f}")
    return "\n".join(lines) + "\n"


def format_adapt_report(report) -> str:
    lines = [f"# transfer report, mode: {report.mode}",
             f"# fine-tune epochs: {report.finetune_epochs}",
             "fold acc sen spe f1"]
    for row in report.fold_metrics:
        lines.append(f"{row['fold']} {_fmt(row['acc'])} {_fmt(row['sen'])} "
                     f"{_fmt(row['spe'])} {_fmt(row['f1'])}")
    lines.append("# summary (mean +/- std over folds)")
    for key in ("acc", "sen", "spe", "f1"):
        mean, std = report.summary[key]
        if mean is None:
            lines.append(f"{key} undef")
        else:
            lines.append(f"{key} {mean:.4f} +/- {std:.4f}")
    return "\n".join(lines) + "\n"


def write_run_dir(out_dir, config_sections: dict, history=None,
                  report_text=None, checkpoint=None):
    """Emit a reproducible run directory: config snapshot, per-epoch log,
    report, and checkpoint. `checkpoint` is (params, head or None)."""
    os.makedirs(out_dir, exist_ok=True)
    write_config_file(os.path.join(out_dir, "config.txt"), config_sections)
    if history is not None:
        atomic_write(os.path.join(out_dir, "log.txt"),
                     format_history(history).encode("utf-8"))
    if report_text is not None:
        atomic_write(os.path.join(out_dir, "report.txt"),
                     report_text.encode("utf-8"))
    if checkpoint is not None:
        params, head = checkpoint
        save_model_checkpoint(os.path.join(out_dir, "checkpoint.dadl"),
                              params, head)
