"""Experiment protocols: intra/inter-subject evaluation, channel and temporal
kernel sweeps, and the synthetic transfer benchmark."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadlnet.epochs import EpochSet, map_to_3d, select_channels, slide_windows
from dadlnet.metrics import ConfusionCounts, aggregate, kfold_split, metrics
from dadlnet.model import DADLNetConfig, build, desk_config
from dadlnet.montage import Montage, scheme_montage
from dadlnet.synth import SynthConfig, synth_epochs
from dadlnet.train import TrainConfig, predict_probs, pretrain, run_mode

INTRA_STEP_FRAC = 0.06
INTER_STEP_FRAC = 0.5


class LeakageError(AssertionError):
    """Train/validation and test trial sets overlap."""


@dataclass
class Dataset:
    """Epoch sets keyed by (subject, session, phase) plus the montage."""

    name: str
    style: str  # 'openbmi' (nonfeedback/feedback phases) or 'bcic' (sessions)
    entries: dict
    montage: Montage

    def __post_init__(self):
        if self.style not in ("openbmi", "bcic"):
            raise ValueError(f"unknown dataset style {self.style!r}")

    @property
    def subjects(self):
        return sorted({k[0] for k in self.entries})

    @property
    def fs(self):
        return next(iter(self.entries.values())).fs

    def subject_sets(self, subject):
        return {k: v for k, v in self.entries.items() if k[0] == subject}

    def pooled(self, keys) -> EpochSet:
        sets = [self.entries[k] for k in keys]
        data = np.concatenate([s.data for s in sets])
        labels = np.concatenate([s.labels for s in sets])
        ids = np.concatenate([s.trial_ids for s in sets])
        first = sets[0]
        return EpochSet(data, labels, first.fs, list(first.channel_names),
                        trial_ids=ids)


def synth_dataset(cfg: SynthConfig, style="openbmi", name="synthetic") -> Dataset:
    """Synthetic dataset with the session/phase structure of the given style."""
    if style == "openbmi":
        blocks = [("s1", "nonfeedback"), ("s1", "feedback"),
                  ("s2", "nonfeedback"), ("s2", "feedback")]
    else:
        blocks = [("s1", "all"), ("s2", "all")]
    entries = {}
    next_id = 0
    for subject in range(cfg.n_subjects):
        sid = f"S{subject:02d}"
        for stream, (session, phase) in enumerate(blocks):
            eset = synth_epochs(cfg, subject, stream=stream, subject_id=sid,
                                session_id=session)
            eset.trial_ids = np.arange(next_id, next_id + eset.n_trials)
            next_id += eset.n_trials
            entries[(sid, session, phase)] = eset
    from dadlnet.montage import openbmi_montage
    return Dataset(name, style, entries, openbmi_montage())


def assert_no_leakage(train_ids, test_ids):
    overlap = set(np.asarray(train_ids).tolist()) & set(np.asarray(test_ids).tolist())
    if overlap:
        raise LeakageError(f"trial ids in both train and test: {sorted(overlap)[:10]}")


def _subset(epochs: EpochSet, mask) -> EpochSet:
    return EpochSet(epochs.data[mask], epochs.labels[mask], epochs.fs,
                    list(epochs.channel_names), epochs.subject_id,
                    epochs.session_id, epochs.trial_ids[mask])


def _window_params(fs, frac):
    window = int(fs)  # window length matches the sampling rate (1 s)
    step = max(int(round(frac * window)), 1)
    return window, step


def _evaluate(params, montage, test: EpochSet):
    probs = predict_probs(params, map_to_3d(test, montage).data)
    counts = ConfusionCounts.from_predictions((probs >= 0.5).astype(int),
                                              test.labels)
    return metrics(counts)


@dataclass
class ProtocolReport:
    protocol: str
    rows: list = field(default_factory=list)        # one dict per (subject, fold)
    per_subject: dict = field(default_factory=dict)  # subject -> mean metrics
    summary: dict = field(default_factory=dict)      # metric -> (mean, std) over subjects

    def finish(self):
        for subject in sorted({r["subject"] for r in self.rows}):
            entries = [r for r in self.rows if r["subject"] == subject]
            agg = aggregate(entries)
            self.per_subject[subject] = {k: v[0] for k, v in agg.items()}
        self.summary = aggregate(list(self.per_subject.values()))
        return self


def _intra_splits(dataset: Dataset, subject):
    keys = dataset.subject_sets(subject)
    if dataset.style == "bcic":
        train_keys = [k for k in keys if k[1] == "s1"]
        test_keys = [k for k in keys if k[1] == "s2"]
    else:
        train_keys = [k for k in keys if k[2] == "nonfeedback"]
        test_keys = [k for k in keys if k[2] == "feedback"]
    if not train_keys or not test_keys:
        raise ValueError(f"subject {subject}: missing session or phase data")
    return dataset.pooled(sorted(train_keys)), dataset.pooled(sorted(test_keys))


def run_intra_subject(dataset: Dataset, model_cfg: DADLNetConfig,
                      train_cfg: TrainConfig) -> ProtocolReport:
    """Per-subject k-fold train/val on the training sessions, test on the
    held-out sessions. Training folds are slid (0.06 x window); validation
    and test epochs stay unslid."""
    report = ProtocolReport("intra-subject")
    window, step = _window_params(dataset.fs, INTRA_STEP_FRAC)
    for subject in dataset.subjects:
        pool, test = _intra_splits(dataset, subject)
        assert_no_leakage(pool.trial_ids, test.trial_ids)
        folds = kfold_split(pool.n_trials, train_cfg.n_folds, train_cfg.seed)
        for fold_i, (train_idx, val_idx) in enumerate(folds):
            train_set = slide_windows(_subset(pool, train_idx), window, step)
            val_set = _subset(pool, val_idx)
            assert_no_leakage(train_set.trial_ids, val_set.trial_ids)
            input_shape = (window, dataset.montage.rows, dataset.montage.cols)
            params = build(model_cfg, input_shape,
                           seed=train_cfg.seed + fold_i)
            val_win = slide_windows(val_set, window, max(window, 1)) \
                if val_set.n_timesteps > window else val_set
            test_win = slide_windows(test, window, max(window, 1)) \
                if test.n_timesteps > window else test
            params, _ = pretrain(params, dataset.montage, train_set, val_win,
                                 train_cfg)
            entry = _evaluate(params, dataset.montage, test_win)
            entry.update(subject=subject, fold=fold_i)
            report.rows.append(entry)
    return report.finish()


def run_inter_subject(dataset: Dataset, model_cfg: DADLNetConfig,
                      train_cfg: TrainConfig, mode: str | None = None):
    """Leave-one-subject-out. Without a mode, reports pretraining accuracy on
    each held-out subject; with a mode ('dda'/'ft'/'ntf'), runs that transfer
    strategy with per-subject source domains on top of the fold-0 model.

    Returns (pretrain_report, adapt_reports) where adapt_reports maps target
    subject -> AdaptReport (empty without a mode)."""
    subjects = dataset.subjects
    if len(subjects) < 2:
        raise ValueError("inter-subject protocol needs at least 2 subjects")
    report = ProtocolReport("inter-subject")
    adapt_reports = {}
    window, step = _window_params(dataset.fs, INTER_STEP_FRAC)
    da_window, da_step = _window_params(dataset.fs, INTRA_STEP_FRAC)
    for target_subject in subjects:
        others = [s for s in subjects if s != target_subject]
        pool = dataset.pooled(sorted(
            k for k in dataset.entries if k[0] != target_subject))
        target = dataset.pooled(sorted(
            k for k in dataset.entries if k[0] == target_subject))
        assert_no_leakage(pool.trial_ids, target.trial_ids)
        folds = kfold_split(pool.n_trials, train_cfg.n_folds, train_cfg.seed)
        input_shape = (window, dataset.montage.rows, dataset.montage.cols)
        test_win = slide_windows(target, window, max(window, 1)) \
            if target.n_timesteps > window else target
        fold0_params = None
        for fold_i, (train_idx, val_idx) in enumerate(folds):
            train_set = slide_windows(_subset(pool, train_idx), window, step)
            val_set = _subset(pool, val_idx)
            params = build(model_cfg, input_shape, seed=train_cfg.seed + fold_i)
            params, _ = pretrain(params, dataset.montage, train_set, val_set,
                                 train_cfg)
            entry = _evaluate(params, dataset.montage, test_win)
            entry.update(subject=target_subject, fold=fold_i)
            report.rows.append(entry)
            if fold_i == 0:
                fold0_params = params
        if mode is not None:
            def windowed(eset):
                if eset.n_timesteps > da_window:
                    return slide_windows(eset, da_window, da_step)
                return eset
            sources = [windowed(dataset.pooled(sorted(
                k for k in dataset.entries if k[0] == s))) for s in others]
            target_da = windowed(target)
            adapt_reports[target_subject] = run_mode(
                mode, fold0_params, dataset.montage, sources, target_da,
                train_cfg)
    return report.finish(), adapt_reports


SCHEMES = ("all", "s1", "s2", "s3", "s4")

# reduced spatial schedules that close the smaller scheme grids to 1x1
SCHEME_SPATIAL = {
    "all": None,  # default 6x9 schedule
    "s1": {"spatial_kernels": [(2, 2), (2, 2), (1, 2), (1, 1)],
           "spatial_strides": [(1, 1), (2, 2), (1, 2), (1, 1)]},
    "s2": {"spatial_kernels": [(2, 2), (2, 2), (1, 1), (1, 1)],
           "spatial_strides": [(1, 1), (2, 2), (1, 1), (1, 1)]},
}
SCHEME_SPATIAL["s3"] = SCHEME_SPATIAL["s4"] = SCHEME_SPATIAL["s2"]


def scheme_model_config(scheme: str, base_cfg: DADLNetConfig) -> DADLNetConfig:
    kw = dict(fs=base_cfg.fs,
              temporal_kernel_fraction=base_cfg.temporal_kernel_fraction,
              temporal_kernels=list(base_cfg.temporal_kernels),
              temporal_pools=list(base_cfg.temporal_pools),
              filters=list(base_cfg.filters),
              dropout_p=base_cfg.dropout_p, se_ratio=base_cfg.se_ratio)
    spatial = SCHEME_SPATIAL[scheme]
    if spatial:
        kw.update(spatial)
    else:
        kw.update(spatial_kernels=list(base_cfg.spatial_kernels),
                  spatial_strides=list(base_cfg.spatial_strides))
    return DADLNetConfig(**kw)


def _scheme_dataset(dataset: Dataset, scheme: str) -> Dataset:
    montage = scheme_montage(scheme) if scheme != "all" else dataset.montage
    entries = {k: select_channels(v, scheme) for k, v in dataset.entries.items()}
    return Dataset(dataset.name, dataset.style, entries, montage)


def sweep_channel_schemes(dataset: Dataset, base_cfg: DADLNetConfig,
                          train_cfg: TrainConfig, schemes=SCHEMES) -> dict:
    """run_intra_subject per channel-selection scheme; montage and conv
    schedule are adjusted per scheme. Failures are recorded per scheme and
    the sweep continues."""
    table = {}
    for scheme in schemes:
        try:
            sub = _scheme_dataset(dataset, scheme)
            cfg = scheme_model_config(scheme, base_cfg)
            table[scheme] = run_intra_subject(sub, cfg, train_cfg)
        except ValueError as exc:
            table[scheme] = {"error": str(exc)}
    return table


def sweep_time_kernels(dataset: Dataset, base_cfg: DADLNetConfig,
                       train_cfg: TrainConfig,
                       fractions=(0.25, 0.125, 0.0625, 0.03125)) -> dict:
    """Per-fraction intra-subject runs; per-subject F1 plus mean/std."""
    table = {}
    for frac in fractions:
        if int(frac * dataset.fs) < 1:
            raise ValueError(f"fraction {frac} yields a temporal kernel < 1 "
                             f"sample at fs={dataset.fs}")
        cfg = scheme_model_config("all", base_cfg)
        cfg.temporal_kernel_fraction = frac
        report = run_intra_subject(dataset, cfg, train_cfg)
        table[frac] = {
            "per_subject_f1": {s: m["f1"] for s, m in report.per_subject.items()},
            "summary_f1": report.summary["f1"],
        }
    return table


def transfer_benchmark(seed: int, n_subjects=3, trials=60, fs=64.0, T=64,
                       class_gap=0.6, domain_shift=1.5,
                       model_cfg: DADLNetConfig | None = None,
                       train_cfg: TrainConfig | None = None,
                       modes=("dda", "ft", "ntf")) -> dict:
    """Desk-scale transfer comparison on domain-shifted synthetic subjects.

    Pretrains one extractor on all source subjects, then scores each strategy
    on the target subject (the last one). Returns mode -> mean accuracy."""
    scfg = SynthConfig(n_subjects=n_subjects, trials=trials, fs=fs, T=T,
                       class_gap=class_gap, domain_shift=domain_shift,
                       seed=seed)
    subjects = [synth_epochs(scfg, s) for s in range(n_subjects)]
    next_id = 0
    for eset in subjects:
        eset.trial_ids = np.arange(next_id, next_id + eset.n_trials)
        next_id += eset.n_trials
    sources, target = subjects[:-1], subjects[-1]

    model_cfg = model_cfg or desk_config(fs)
    train_cfg = train_cfg or TrainConfig(max_epochs=15, patience=5,
                                         batch_size=32, seed=seed,
                                         stage1_epochs=120, stage2_epochs=40,
                                         stage3_epochs=60, n_folds=5)
    from dadlnet.montage import openbmi_montage
    montage = openbmi_montage()

    rng = np.random.default_rng(seed)
    pool_data = np.concatenate([s.data for s in sources])
    pool_labels = np.concatenate([s.labels for s in sources])
    pool_ids = np.concatenate([s.trial_ids for s in sources])
    order = rng.permutation(len(pool_data))
    cut = int(0.8 * len(order))
    mk = lambda idx: EpochSet(pool_data[idx], pool_labels[idx], fs,
                              list(sources[0].channel_names), trial_ids=pool_ids[idx])
    extractor = build(model_cfg, (T, montage.rows, montage.cols), seed=seed)
    extractor, _ = pretrain(extractor, montage, mk(order[:cut]), mk(order[cut:]),
                            train_cfg)
    results = {}
    for mode in modes:
        rep = run_mode(mode, extractor, montage, sources, target, train_cfg)
        results[mode] = rep.summary["acc"][0]
    return results
