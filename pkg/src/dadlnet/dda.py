"""Dynamic domain adaptation head.

A shared buffer FC layer maps extracted features into a common space; each
source domain gets its own two-layer adapter (DSA) and sigmoid classifier
(DSC). Training couples per-source binary cross-entropy with a multi-kernel
MMD between adapted source and target features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadlnet import tensor as T
from dadlnet.model import _uniform_init
from dadlnet.tensor import Tensor


@dataclass
class MMDConfig:
    bandwidth_multipliers: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    # None = median heuristic per call; a float pins the base bandwidth
    fixed_bandwidth: float | None = None

    def __post_init__(self):
        if not self.bandwidth_multipliers or any(m <= 0 for m in self.bandwidth_multipliers):
            raise ValueError("bandwidth multipliers must be positive and nonempty")


@dataclass
class DomainBundle:
    sources: list  # [(X [Ns,D], y [Ns])]
    target: tuple  # (X [Nt,D], y or None)

    def __post_init__(self):
        if not self.sources:
            raise ValueError("bundle needs at least one source domain")
        d = self.target[0].shape[1]
        if self.target[0].shape[0] < 2:
            raise ValueError("target domain needs at least 2 samples")
        for i, (xs, ys) in enumerate(self.sources):
            if xs.shape[1] != d:
                raise ValueError(f"source {i} feature dim {xs.shape[1]} != {d}")
            if xs.shape[0] < 2:
                raise ValueError(f"source {i} needs at least 2 samples")
            if len(ys) != xs.shape[0]:
                raise ValueError(f"source {i}: labels do not match samples")


def _pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    a2 = T.tsum(T.mul(a, a), axis=1, keepdims=True)       # [Na,1]
    b2 = T.tsum(T.mul(b, b), axis=1, keepdims=True)       # [Nb,1]
    cross = T.matmul(a, T.transpose(b))                   # [Na,Nb]
    d = T.add(T.add(a2, T.reshape(b2, (1, b.shape[0]))), T.mul(cross, -2.0))
    return T.clip(d, 0.0, np.inf)


def _kernel_sum(d2: Tensor, sigma2: float, multipliers) -> Tensor:
    total = None
    for m in multipliers:
        k = T.exp(T.mul(d2, -1.0 / (m * sigma2)))
        total = k if total is None else T.add(total, k)
    return total


def median_sq_bandwidth(xs: np.ndarray, xt: np.ndarray) -> float:
    """Median pairwise squared distance of the joint sample; 1.0 if degenerate."""
    z = np.concatenate([xs, xt], axis=0)
    sq = ((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=2)
    med = float(np.median(sq[np.triu_indices(len(z), k=1)]))
    return med if med > 0 else 1.0


def mmd2(xs, xt, cfg: MMDConfig | None = None):
    """Biased (V-statistic) squared MMD with a multi-bandwidth Gaussian kernel.

    Accepts arrays or Tensors; returns a scalar Tensor differentiable w.r.t.
    Tensor inputs. The base bandwidth is the median heuristic, computed on
    detached values.
    """
    cfg = cfg or MMDConfig()
    xs = xs if isinstance(xs, Tensor) else Tensor(np.asarray(xs, dtype=np.float64))
    xt = xt if isinstance(xt, Tensor) else Tensor(np.asarray(xt, dtype=np.float64))
    if xs.shape[0] < 2 or xt.shape[0] < 2:
        raise ValueError("mmd2 needs at least 2 samples on each side")
    sigma2 = cfg.fixed_bandwidth or median_sq_bandwidth(xs.data, xt.data)
    mults = cfg.bandwidth_multipliers
    kss = T.tmean(_kernel_sum(_pairwise_sq_dists(xs, xs), sigma2, mults))
    ktt = T.tmean(_kernel_sum(_pairwise_sq_dists(xt, xt), sigma2, mults))
    kst = T.tmean(_kernel_sum(_pairwise_sq_dists(xs, xt), sigma2, mults))
    return T.add(T.add(kss, ktt), T.mul(kst, -2.0))


def bce_loss(p, y):
    """Mean binary cross-entropy; probabilities clamped away from {0,1}."""
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if p.size == 0:
        raise ValueError("bce_loss: empty batch")
    pc = T.clip(p, 1e-12, 1 - 1e-12)
    terms = T.add(T.mul(Tensor(y), T.log(pc)),
                  T.mul(Tensor(1.0 - y), T.log(T.add(1.0, T.neg(pc)))))
    return T.neg(T.tmean(terms))


class DDAHead:
    """Buffer FC + per-source (DSA, DSC) pairs; count tracks the sources."""

    def __init__(self, num_sources: int, feature_dim: int, buffer_dim: int = 64,
                 adapter_dim: int = 32, seed: int = 0):
        if num_sources < 1:
            raise ValueError("num_sources must be >= 1")
        self.num_sources = num_sources
        self.feature_dim = feature_dim
        self.buffer_dim = buffer_dim
        self.adapter_dim = adapter_dim
        rng = np.random.default_rng(seed)
        d, db, da = feature_dim, buffer_dim, adapter_dim
        self.tensors: dict[str, Tensor] = {
            "buffer.w": _uniform_init(rng, (d, db), d, db),
            "buffer.b": Tensor(np.zeros(db), requires_grad=True),
        }
        for i in range(num_sources):
            self.tensors[f"dsa{i}.w1"] = _uniform_init(rng, (db, da), db, da)
            self.tensors[f"dsa{i}.b1"] = Tensor(np.zeros(da), requires_grad=True)
            self.tensors[f"dsa{i}.w2"] = _uniform_init(rng, (da, da), da, da)
            self.tensors[f"dsa{i}.b2"] = Tensor(np.zeros(da), requires_grad=True)
            self.tensors[f"dsc{i}.w"] = _uniform_init(rng, (da, 1), da, 1)
            self.tensors[f"dsc{i}.b"] = Tensor(np.zeros(1), requires_grad=True)

    def parameter_count(self):
        return sum(t.size for t in self.tensors.values())

    def named_arrays(self):
        for name, t in self.tensors.items():
            yield name, t.data

    def load_arrays(self, arrays):
        for name, t in self.tensors.items():
            t.data = np.asarray(arrays[name], dtype=np.float64).reshape(t.shape)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def group(self, which: str):
        """Parameter names for 'buffer', 'dsa', or 'dsc'."""
        return [n for n in self.tensors if n.startswith(which)]

    def buffer_forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        return T.fully_connected(x, self.tensors["buffer.w"], self.tensors["buffer.b"])

    def adapter_forward(self, i, z):
        h = T.elu(T.fully_connected(z, self.tensors[f"dsa{i}.w1"],
                                    self.tensors[f"dsa{i}.b1"]))
        return T.fully_connected(h, self.tensors[f"dsa{i}.w2"],
                                 self.tensors[f"dsa{i}.b2"])

    def classifier_forward(self, i, za):
        logits = T.fully_connected(za, self.tensors[f"dsc{i}.w"],
                                   self.tensors[f"dsc{i}.b"])
        return T.reshape(T.sigmoid(logits), (za.shape[0],))

    def predict(self, x):
        """Mean probability over all per-source classifiers."""
        z = self.buffer_forward(x)
        probs = [self.classifier_forward(i, self.adapter_forward(i, z))
                 for i in range(self.num_sources)]
        total = probs[0]
        for p in probs[1:]:
            total = T.add(total, p)
        return T.mul(total, 1.0 / self.num_sources).data


def build_dda(num_sources, feature_dim, buffer_dim=64, adapter_dim=32, seed=0):
    return DDAHead(num_sources, feature_dim, buffer_dim, adapter_dim, seed)


def dda_losses(head: DDAHead, bundle: DomainBundle, lam: float = 1.0,
               mmd_cfg: MMDConfig | None = None):
    """Mean over sources of (CE_i + lam * MMD_i); returns (total, per-source)."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if len(bundle.sources) != head.num_sources:
        raise ValueError(
            f"bundle has {len(bundle.sources)} sources, head has {head.num_sources}"
        )
    zt = head.buffer_forward(bundle.target[0])
    total = None
    per_source = []
    for i, (xs, ys) in enumerate(bundle.sources):
        zs = head.adapter_forward(i, head.buffer_forward(xs))
        zti = head.adapter_forward(i, zt)
        ce = bce_loss(head.classifier_forward(i, zs), ys)
        mmd = mmd2(zs, zti, mmd_cfg)
        term = T.add(ce, T.mul(mmd, lam)) if lam > 0 else ce
        total = term if total is None else T.add(total, term)
        per_source.append((ce.item(), mmd.item()))
    total = T.mul(total, 1.0 / head.num_sources)
    return total, per_source
