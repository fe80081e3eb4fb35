"""Training workflows: supervised pretraining and the three-stage dynamic
domain adaptation (with fine-tune-only and no-transfer baselines)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadlnet import model as M
from dadlnet.dda import DDAHead, MMDConfig, bce_loss, build_dda, mmd2
from dadlnet.epochs import EpochSet, map_to_3d
from dadlnet.metrics import ConfusionCounts, aggregate, kfold_split, metrics
from dadlnet.model import DADLNetParams
from dadlnet.optim import EarlyStopper, Nadam
from dadlnet.tensor import Tensor

MODES = ("dda", "ft", "ntf")


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 30
    max_epochs: int = 100
    batch_size: int = 32
    lam_mmd: float = 1.0
    seed: int = 0
    # adaptation-stage epoch budgets (early stopping active in each)
    stage1_epochs: int = 100
    stage2_epochs: int = 50
    stage3_epochs: int = 50
    stage2_joint_ce: bool = False  # keep a CE term during MMD training
    buffer_dim: int = 64
    adapter_dim: int = 32
    n_folds: int = 5

    def __post_init__(self):
        if self.lr <= 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("invalid optimizer settings")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lam_mmd < 0:
            raise ValueError("lam_mmd must be >= 0")


def _epoch_batches(n, batch_size, rng):
    """Shuffled minibatch index arrays; singleton remainders are dropped
    because batch norm needs at least two samples."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        batch = order[start:start + batch_size]
        if len(batch) >= 2:
            yield batch


def predict_probs(params: DADLNetParams, grids: np.ndarray, batch=256):
    out = np.empty(len(grids))
    for start in range(0, len(grids), batch):
        chunk = grids[start:start + batch]
        out[start:start + batch] = M.forward(chunk, params, training=False).data
    return out


def accuracy(probs, labels):
    return float(((probs >= 0.5).astype(int) == labels).mean())


def pretrain(params: DADLNetParams, montage, train: EpochSet, val: EpochSet,
             cfg: TrainConfig):
    """Minimize BCE on shuffled minibatches with Nadam and early stopping.

    Returns (params, history); params hold the best-validation snapshot.
    """
    if train.n_trials == 0 or val.n_trials == 0:
        raise ValueError("pretrain: empty train or validation split")
    x_train = map_to_3d(train, montage).data
    x_val = map_to_3d(val, montage).data
    y_train, y_val = train.labels, val.labels

    opt = Nadam(params.tensors, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    stopper = EarlyStopper(cfg.patience)
    history = []
    for epoch in range(cfg.max_epochs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        losses = []
        for batch in _epoch_batches(len(x_train), cfg.batch_size, rng):
            opt.zero_grad()
            probs = M.forward(x_train[batch], params, training=True, rng=rng)
            loss = bce_loss(probs, y_train[batch])
            loss.backward()
            opt.step()
            losses.append(loss.item())
        train_probs = predict_probs(params, x_train)
        val_probs = predict_probs(params, x_val)
        val_loss = bce_loss(val_probs, y_val).item()
        history.append({"epoch": epoch, "split": "train",
                        "loss": float(np.mean(losses)),
                        "acc": accuracy(train_probs, y_train)})
        history.append({"epoch": epoch, "split": "val", "loss": val_loss,
                        "acc": accuracy(val_probs, y_val)})
        if stopper.update(val_loss, params.snapshot):
            break
    if stopper.best_snapshot is not None:
        params.restore(stopper.best_snapshot)
    return params, history


def extract_feature_matrix(params: DADLNetParams, montage, epochs: EpochSet,
                           batch=256) -> np.ndarray:
    """Frozen-extractor features [N, F4] for one epoch set."""
    grids = map_to_3d(epochs, montage).data
    out = np.empty((len(grids), params.feature_dim))
    for start in range(0, len(grids), batch):
        out[start:start + batch] = M.extract_features(
            grids[start:start + batch], params).data
    return out


def _head_snapshot(head: DDAHead):
    return {n: a.copy() for n, a in head.named_arrays()}


def _full_batch_train(head, names, loss_fn, max_epochs, patience, cfg,
                      val_fn=None):
    """Full-batch Nadam on a parameter subset; early stop on val_fn (or the
    training loss itself). Returns (epochs_run, loss_history)."""
    if max_epochs == 0:
        return 0, []
    opt = Nadam(head.tensors, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                names=names)
    stopper = EarlyStopper(patience)
    history = []
    epochs_run = 0
    for _ in range(max_epochs):
        opt.zero_grad()
        loss = loss_fn()
        loss.backward()
        opt.step()
        epochs_run += 1
        monitored = val_fn() if val_fn is not None else loss.item()
        history.append(monitored)
        if stopper.update(monitored, lambda: _head_snapshot(head)):
            break
    if stopper.best_snapshot is not None:
        head.load_arrays(stopper.best_snapshot)
    return epochs_run, history


def _source_ce(head, feats, labels, indices=None):
    total = None
    for i, (f, y) in enumerate(zip(feats, labels)):
        if indices is not None:
            f, y = f[indices[i]], y[indices[i]]
        probs = head.classifier_forward(i, head.adapter_forward(
            i, head.buffer_forward(f)))
        ce = bce_loss(probs, y)
        total = ce if total is None else total + ce
    return total * (1.0 / len(feats))


def _mean_mmd(head, feats, target_feat, mmd_cfg, as_tensor=True):
    zt = head.buffer_forward(target_feat)
    total = None
    for i, f in enumerate(feats):
        zs = head.adapter_forward(i, head.buffer_forward(f))
        zti = head.adapter_forward(i, zt)
        m = mmd2(zs, zti, mmd_cfg)
        total = m if total is None else total + m
    total = total * (1.0 / len(feats))
    return total if as_tensor else total.item()


def _target_ce(head, f_target, y_target):
    """Mean per-source CE of each DSC against target labels."""
    zt = head.buffer_forward(f_target)
    total = None
    for i in range(head.num_sources):
        probs = head.classifier_forward(i, head.adapter_forward(i, zt))
        ce = bce_loss(probs, y_target)
        total = ce if total is None else total + ce
    return total * (1.0 / head.num_sources)


def trial_level_folds(epochs: EpochSet, k: int, seed: int):
    """K-fold masks over rows, split at trial level so windows derived from
    one trial never straddle a fold boundary."""
    unique_ids = np.unique(epochs.trial_ids)
    out = []
    for train_idx, test_idx in kfold_split(len(unique_ids), k, seed):
        train_ids = set(unique_ids[train_idx])
        test_ids = set(unique_ids[test_idx])
        train_mask = np.array([t in train_ids for t in epochs.trial_ids])
        test_mask = np.array([t in test_ids for t in epochs.trial_ids])
        out.append((train_mask, test_mask))
    return out


@dataclass
class AdaptReport:
    mode: str
    fold_metrics: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    finetune_epochs: int = 0
    stage1_history: list = field(default_factory=list)
    stage2_history: list = field(default_factory=list)  # per fold: mmd means


def run_mode(mode: str, extractor: DADLNetParams, montage,
             sources: list[EpochSet], target: EpochSet, cfg: TrainConfig,
             mmd_cfg: MMDConfig | None = None) -> AdaptReport:
    """Evaluate one transfer strategy on the target domain.

    ntf: source-trained head scored on each target test fold.
    ft:  plus per-fold DSC fine-tuning on the labeled fine-tune split.
    dda: plus per-fold MMD alignment (stage 2) before fine-tuning.

    The feature extractor is used frozen throughout.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    feats = [extract_feature_matrix(extractor, montage, s) for s in sources]
    labels = [s.labels for s in sources]
    f_target = extract_feature_matrix(extractor, montage, target)
    y_target = target.labels

    head = build_dda(len(sources), extractor.feature_dim, cfg.buffer_dim,
                     cfg.adapter_dim, seed=cfg.seed)

    # stage 1: classification training on labeled source features,
    # early-stopped on a held-out 20% slice of each source
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    train_parts, val_parts = [], []
    for f in feats:
        order = rng.permutation(len(f))
        cut = max(int(0.8 * len(f)), 1)
        train_parts.append(order[:cut])
        val_parts.append(order[cut:] if cut < len(f) else order[:1])
    _, s1_hist = _full_batch_train(
        head, list(head.tensors),
        lambda: _source_ce(head, feats, labels, train_parts),
        cfg.stage1_epochs, cfg.patience, cfg,
        val_fn=lambda: _source_ce(head, feats, labels, val_parts).item())
    stage1_state = _head_snapshot(head)

    report = AdaptReport(mode=mode, stage1_history=s1_hist)
    folds = trial_level_folds(target, cfg.n_folds, cfg.seed)
    for fold_i, (ft_mask, test_mask) in enumerate(folds):
        if test_mask.sum() == 0 or ft_mask.sum() == 0:
            raise ValueError(f"fold {fold_i}: empty target split")
        head.load_arrays(stage1_state)
        f_ft, y_ft = f_target[ft_mask], y_target[ft_mask]
        f_test, y_test = f_target[test_mask], y_target[test_mask]

        if mode == "dda":
            # stage 2: domain alignment on source + target fine-tune split
            def stage2_loss():
                loss = _mean_mmd(head, feats, f_ft, mmd_cfg)
                if cfg.stage2_joint_ce:
                    loss = _source_ce(head, feats, labels) + loss * cfg.lam_mmd
                return loss
            _, mmd_hist = _full_batch_train(
                head, head.group("buffer") + head.group("dsa"), stage2_loss,
                cfg.stage2_epochs, cfg.patience, cfg,
                val_fn=lambda: _mean_mmd(head, feats, f_ft, mmd_cfg,
                                         as_tensor=False))
            report.stage2_history.append(mmd_hist)

        if mode in ("dda", "ft"):
            # stage 3: fine-tune the classification layers on target labels
            ran, _ = _full_batch_train(
                head, head.group("dsc"),
                lambda: _target_ce(head, f_ft, y_ft),
                cfg.stage3_epochs, cfg.patience, cfg)
            report.finetune_epochs += ran

        probs = head.predict(f_test)
        counts = ConfusionCounts.from_predictions((probs >= 0.5).astype(int),
                                                  y_test)
        entry = metrics(counts)
        entry["fold"] = fold_i
        report.fold_metrics.append(entry)

    report.summary = aggregate(report.fold_metrics)
    return report


def adapt_dda(extractor: DADLNetParams, montage, sources, target,
              cfg: TrainConfig, mmd_cfg=None) -> AdaptReport:
    return run_mode("dda", extractor, montage, sources, target, cfg, mmd_cfg)
