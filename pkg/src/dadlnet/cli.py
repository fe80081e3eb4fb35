"""Command-line interface: synth, pretrain, adapt, evaluate, sweep-channels,
sweep-kernels, report.

All outputs land under --out-dir. Config files are [section] / key = value
text; command-line flags win over config values with a logged notice. Errors
exit nonzero with a single "error: ..." line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from dadlnet import io as dio
from dadlnet.epochs import EpochSet, map_to_3d, slide_windows
from dadlnet.metrics import ConfusionCounts, metrics
from dadlnet.model import desk_config
from dadlnet.montage import save_montage
from dadlnet.protocols import (SCHEMES, run_inter_subject, run_intra_subject,
                               sweep_channel_schemes, sweep_time_kernels,
                               synth_dataset, _intra_splits)
from dadlnet.synth import SynthConfig
from dadlnet.train import MODES, TrainConfig, predict_probs, pretrain

TRAIN_SCHEMA = {
    "lr": float, "beta1": float, "beta2": float, "patience": int,
    "max_epochs": int, "batch_size": int, "lam_mmd": float, "seed": int,
    "stage1_epochs": int, "stage2_epochs": int, "stage3_epochs": int,
    "stage2_joint_ce": bool, "buffer_dim": int, "adapter_dim": int,
    "n_folds": int,
}
MODEL_SCHEMA = {
    "fs": float, "temporal_kernel_fraction": float, "dropout_p": float,
    "se_ratio": int, "filters": list, "temporal_kernels": list,
    "temporal_pools": list, "spatial_kernels": list, "spatial_strides": list,
}
SYNTH_SCHEMA = {
    "subjects": int, "trials": int, "fs": float, "samples": int,
    "class_gap": float, "domain_shift": float, "style": str, "seed": int,
}


class CliError(Exception):
    pass


def _notice(msg):
    print(f"notice: {msg}", file=sys.stderr)


def _load_sections(args):
    if not getattr(args, "config", None):
        return {}
    try:
        raw = dio.parse_config_file(args.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    sections = {}
    for name, schema in (("train", TRAIN_SCHEMA), ("model", MODEL_SCHEMA),
                         ("synth", SYNTH_SCHEMA)):
        if name in raw:
            sections[name] = dio.coerce_config(raw[name], schema,
                                               source=f"[{name}]")
    unknown = set(raw) - {"train", "model", "synth"}
    if unknown:
        raise CliError(f"unknown config sections: {', '.join(sorted(unknown))}"
                       "; valid sections: model, synth, train")
    return sections


def _merge_flag(sections, section, key, flag_value, flag_name):
    """Flag beats config; a config value fills in when the flag is unset."""
    from_config = sections.get(section, {}).get(key)
    if flag_value is not None:
        if from_config is not None and from_config != flag_value:
            _notice(f"flag {flag_name}={flag_value} overrides config "
                    f"{section}.{key}={from_config}")
        return flag_value
    return from_config


def _train_config(args, sections) -> TrainConfig:
    values = dict(sections.get("train", {}))
    seed = _merge_flag(sections, "train", "seed", args.seed, "--seed")
    if seed is not None:
        values["seed"] = seed
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad train config: {exc}") from exc


def _model_config(sections, fs):
    values = dict(sections.get("model", {}))
    values.setdefault("fs", fs)
    for key in ("spatial_kernels", "spatial_strides"):
        if key in values:
            values[key] = [tuple(k) for k in values[key]]
    try:
        return desk_config(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad model config: {exc}") from exc


def _dataset(args):
    try:
        return dio.load_dataset(args.manifest)
    except (OSError, ValueError, dio.EpochFileError) as exc:
        raise CliError(f"cannot load dataset: {exc}") from exc


def _config_snapshot(args, train_cfg, model_cfg=None, extra=None):
    sections = {"train": {k: getattr(train_cfg, k) for k in TRAIN_SCHEMA}}
    if model_cfg is not None:
        sections["model"] = {
            "fs": model_cfg.fs,
            "temporal_kernel_fraction": model_cfg.temporal_kernel_fraction,
            "dropout_p": model_cfg.dropout_p, "se_ratio": model_cfg.se_ratio,
            "filters": list(model_cfg.filters),
            "temporal_kernels": list(model_cfg.temporal_kernels),
            "temporal_pools": list(model_cfg.temporal_pools),
            "spatial_kernels": [list(k) for k in model_cfg.spatial_kernels],
            "spatial_strides": [list(s) for s in model_cfg.spatial_strides],
        }
    if extra:
        sections["run"] = extra
    return sections


def cmd_synth(args):
    sections = _load_sections(args)
    get = lambda key, flag, name: _merge_flag(sections, "synth", key, flag, name)
    values = {
        "n_subjects": get("subjects", args.subjects, "--subjects") or 2,
        "trials": get("trials", args.trials, "--trials") or 100,
        "fs": get("fs", args.fs, "--fs") or 128.0,
        "T": get("samples", args.samples, "--samples") or 128,
        "class_gap": get("class_gap", args.class_gap, "--class-gap"),
        "domain_shift": get("domain_shift", args.domain_shift,
                            "--domain-shift"),
        "seed": get("seed", args.seed, "--seed"),
    }
    values = {k: v for k, v in values.items() if v is not None}
    style = get("style", args.style, "--style") or "openbmi"
    ds = synth_dataset(SynthConfig(**values), style=style)

    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    save_montage(ds.montage, os.path.join(out, "montage.txt"))
    entries = {}
    for key, eset in sorted(ds.entries.items()):
        rel = "{}_{}_{}.eeg3".format(*key)
        dio.save_epochs(eset, os.path.join(out, rel))
        entries[key] = rel
    manifest = dio.Manifest(ds.name, ds.style, "montage.txt", entries)
    dio.save_manifest(manifest, os.path.join(out, "manifest.txt"))
    print(f"wrote {len(entries)} epoch files under {out}")
    return 0


def cmd_pretrain(args):
    sections = _load_sections(args)
    ds = _dataset(args)
    train_cfg = _train_config(args, sections)
    model_cfg = _model_config(sections, ds.fs)
    montage = ds.montage
    window = int(ds.fs)

    pool_keys, test_keys = [], []
    for subject in ds.subjects:
        pool, test = _intra_splits(ds, subject)
        pool_keys.append(pool)
        test_keys.append(test)
    pool = EpochSet(np.concatenate([p.data for p in pool_keys]),
                    np.concatenate([p.labels for p in pool_keys]), ds.fs,
                    list(pool_keys[0].channel_names),
                    trial_ids=np.concatenate([p.trial_ids for p in pool_keys]))
    rng = np.random.default_rng(train_cfg.seed)
    order = rng.permutation(pool.n_trials)
    cut = max(int(0.8 * len(order)), 1)
    pick = lambda idx: EpochSet(pool.data[idx], pool.labels[idx], ds.fs,
                                list(pool.channel_names),
                                trial_ids=pool.trial_ids[idx])
    train_set = pick(order[:cut])
    if train_set.n_timesteps > window:
        step = max(int(round(0.06 * window)), 1)
        train_set = slide_windows(train_set, window, step)
    from dadlnet.model import build
    params = build(model_cfg, (window, montage.rows, montage.cols),
                   seed=train_cfg.seed)
    params, history = pretrain(params, montage, train_set,
                               pick(order[cut:]), train_cfg)

    from dadlnet.protocols import ProtocolReport
    report = ProtocolReport("pretrain")
    for subject, test in zip(ds.subjects, test_keys):
        probs = predict_probs(params, map_to_3d(test, montage).data)
        entry = metrics(ConfusionCounts.from_predictions(
            (probs >= 0.5).astype(int), test.labels))
        entry.update(subject=subject, fold=0)
        report.rows.append(entry)
    report.finish()

    snapshot = _config_snapshot(args, train_cfg, model_cfg,
                                {"command": "pretrain",
                                 "manifest": args.manifest})
    dio.write_run_dir(args.out_dir, snapshot, history=history,
                      report_text=dio.format_report(report, "pretraining"),
                      checkpoint=(params, None))
    mean = report.summary["acc"][0]
    print(f"pretrain done: mean test acc {mean:.4f}; run dir {args.out_dir}")
    return 0


def cmd_adapt(args):
    sections = _load_sections(args)
    ds = _dataset(args)
    train_cfg = _train_config(args, sections)
    model_cfg = _model_config(sections, ds.fs)
    mode = args.mode or "dda"
    if mode not in MODES:
        raise CliError(f"mode must be one of {', '.join(MODES)}")
    loso_report, adapt_reports = run_inter_subject(ds, model_cfg, train_cfg,
                                                   mode=mode)
    chunks = [dio.format_report(loso_report, "leave-one-subject-out pretraining")]
    for subject in sorted(adapt_reports):
        chunks.append(f"\n## target {subject}\n")
        chunks.append(dio.format_adapt_report(adapt_reports[subject]))
    snapshot = _config_snapshot(args, train_cfg, model_cfg,
                                {"command": "adapt", "mode": mode,
                                 "manifest": args.manifest})
    dio.write_run_dir(args.out_dir, snapshot, report_text="".join(chunks))
    accs = [r.summary["acc"][0] for r in adapt_reports.values()]
    print(f"adapt ({mode}) done: mean target acc {np.mean(accs):.4f}; "
          f"run dir {args.out_dir}")
    return 0


def cmd_evaluate(args):
    ds = _dataset(args)
    try:
        params, _, _ = dio.load_model_checkpoint(args.checkpoint)
    except (OSError, dio.EpochFileError, KeyError) as exc:
        raise CliError(f"cannot load checkpoint: {exc}") from exc
    from dadlnet.protocols import ProtocolReport
    report = ProtocolReport("evaluate")
    for subject in ds.subjects:
        _, test = _intra_splits(ds, subject)
        probs = predict_probs(params, map_to_3d(test, ds.montage).data)
        entry = metrics(ConfusionCounts.from_predictions(
            (probs >= 0.5).astype(int), test.labels))
        entry.update(subject=subject, fold=0)
        report.rows.append(entry)
    report.finish()
    text = dio.format_report(report, f"evaluation of {args.checkpoint}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        dio.atomic_write(os.path.join(args.out_dir, "report.txt"),
                         text.encode("utf-8"))
    print(text, end="")
    return 0


def cmd_sweep_channels(args):
    sections = _load_sections(args)
    ds = _dataset(args)
    train_cfg = _train_config(args, sections)
    model_cfg = _model_config(sections, ds.fs)
    schemes = (args.scheme,) if args.scheme else SCHEMES
    table = sweep_channel_schemes(ds, model_cfg, train_cfg, schemes=schemes)
    lines = ["# channel-scheme sweep", "scheme acc_mean acc_std"]
    for scheme in schemes:
        entry = table[scheme]
        if isinstance(entry, dict):
            lines.append(f"{scheme} error: {entry['error']}")
        else:
            mean, std = entry.summary["acc"]
            lines.append(f"{scheme} {mean:.4f} {std:.4f}")
    text = "\n".join(lines) + "\n"
    os.makedirs(args.out_dir, exist_ok=True)
    dio.atomic_write(os.path.join(args.out_dir, "report.txt"),
                     text.encode("utf-8"))
    print(text, end="")
    return 0


def cmd_sweep_kernels(args):
    sections = _load_sections(args)
    ds = _dataset(args)
    train_cfg = _train_config(args, sections)
    model_cfg = _model_config(sections, ds.fs)
    fractions = tuple(args.fractions) if args.fractions else \
        (0.25, 0.125, 0.0625, 0.03125)
    table = sweep_time_kernels(ds, model_cfg, train_cfg, fractions=fractions)
    lines = ["# temporal-kernel sweep (F1)",
             "fraction " + " ".join(f"f1({s})" for s in ds.subjects)
             + " mean std"]
    for frac in fractions:
        entry = table[frac]
        per = " ".join(f"{v:.4f}" if v is not None else "undef"
                       for _, v in sorted(entry["per_subject_f1"].items()))
        mean, std = entry["summary_f1"]
        mtxt = f"{mean:.4f} {std:.4f}" if mean is not None else "undef undef"
        lines.append(f"{frac} {per} {mtxt}")
    text = "\n".join(lines) + "\n"
    os.makedirs(args.out_dir, exist_ok=True)
    dio.atomic_write(os.path.join(args.out_dir, "report.txt"),
                     text.encode("utf-8"))
    print(text, end="")
    return 0


def cmd_report(args):
    path = os.path.join(args.run_dir, "report.txt")
    if not os.path.exists(path):
        raise CliError(f"no report.txt under {args.run_dir}")
    with open(path, "r", encoding="utf-8") as f:
        print(f.read(), end="")
    config_path = os.path.join(args.run_dir, "config.txt")
    if os.path.exists(config_path):
        print("# config snapshot")
        with open(config_path, "r", encoding="utf-8") as f:
            print(f.read(), end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dadlnet",
        description="EEG motor-imagery training and evaluation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--scheme", choices=SCHEMES, default=None)
        p.add_argument("--out-dir", required=out_required)
        p.add_argument("--config", default=None,
                       help="[section] key = value config file")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker-pool bound (this build runs jobs "
                            "sequentially)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--subjects", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--fs", type=float)
    p.add_argument("--samples", type=int, help="timesteps per trial")
    p.add_argument("--class-gap", type=float)
    p.add_argument("--domain-shift", type=float)
    p.add_argument("--style", choices=("openbmi", "bcic"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="supervised pretraining run")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="leave-one-subject-out transfer run")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    common(p, out_required=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-channels", help="channel-scheme comparison")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_sweep_channels)

    p = sub.add_parser("sweep-kernels", help="temporal-kernel comparison")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--fractions", type=float, nargs="+")
    p.set_defaults(func=cmd_sweep_kernels)

    p = sub.add_parser("report", help="print a run directory's report")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
