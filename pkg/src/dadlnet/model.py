"""DADLNet feature extractor and classification head.

Four conv blocks (3D conv -> BN -> ELU -> temporal average pool -> dropout),
a spatial-channel attention block between blocks 3 and 4, then global average
pooling and a sigmoid FC classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadlnet import tensor as T
from dadlnet.tensor import BatchNormState, Tensor


class ShapeClosureError(ValueError):
    """The spatial schedule does not reduce the grid to 1x1."""


@dataclass
class DADLNetConfig:
    fs: float = 400.0
    temporal_kernel_fraction: float = 0.125
    spatial_kernels: list = field(default_factory=lambda: [(2, 2), (2, 2), (1, 2), (2, 2)])
    spatial_strides: list = field(default_factory=lambda: [(1, 1), (2, 2), (1, 2), (2, 2)])
    filters: list = field(default_factory=lambda: [16, 32, 32, 64])
    temporal_kernels: list = field(default_factory=lambda: [0, 3, 3, 3])  # 0 = fraction * fs
    temporal_pools: list = field(default_factory=lambda: [4, 4, 4, 2])
    dropout_p: float = 0.5
    se_ratio: int = 8

    def __post_init__(self):
        lists = (self.spatial_kernels, self.spatial_strides, self.filters,
                 self.temporal_kernels, self.temporal_pools)
        if any(len(l) != 4 for l in lists):
            raise ValueError("per-block config lists must have length 4")
        if self.temporal_kernel_fraction <= 0:
            raise ValueError("temporal_kernel_fraction must be > 0")
        if self.filters[2] % self.se_ratio != 0:
            raise ValueError(
                f"se_ratio {self.se_ratio} must divide the attention-input "
                f"filter count {self.filters[2]}"
            )

    def block_temporal_kernel(self, i: int) -> int:
        k = self.temporal_kernels[i]
        if k == 0:
            k = int(self.temporal_kernel_fraction * self.fs)
        if k < 1:
            raise ValueError(f"block {i + 1}: temporal kernel {k} < 1")
        return k


def desk_config(fs: float = 128.0, **overrides) -> DADLNetConfig:
    """Small configuration whose temporal schedule closes from T = fs samples;
    suited to synthetic desk-scale runs (the full-scale default assumes
    fs = 400 Hz and 1600-sample trials)."""
    kw = dict(fs=fs, temporal_kernels=[0, 3, 3, 2],
              temporal_pools=[2, 2, 2, 2], filters=[8, 16, 16, 32])
    kw.update(overrides)
    return DADLNetConfig(**kw)


def conv_out(d: int, k: int, s: int) -> int:
    return (d - k) // s + 1


def schedule_shapes(config: DADLNetConfig, input_shape):
    """Per-block (t, h, w) output shapes; raises ShapeClosureError on failure."""
    t, h, w = input_shape
    shapes = []
    for i in range(4):
        kt = config.block_temporal_kernel(i)
        (kh, kw) = config.spatial_kernels[i]
        (sh, sw) = config.spatial_strides[i]
        if kt > t or kh > h or kw > w:
            raise ShapeClosureError(
                f"block {i + 1}: kernel ({kt},{kh},{kw}) does not fit "
                f"intermediate shape ({t},{h},{w})"
            )
        t, h, w = conv_out(t, kt, 1), conv_out(h, kh, sh), conv_out(w, kw, sw)
        pool = config.temporal_pools[i]
        if t // pool < 1:
            raise ShapeClosureError(
                f"block {i + 1}: temporal pool {pool} empties length {t}"
            )
        t //= pool
        shapes.append((t, h, w))
    if shapes[-1][1:] != (1, 1):
        raise ShapeClosureError(
            f"block 4: spatial shape {shapes[-1][1:]} != (1, 1); "
            f"per-block shapes {[(s[1], s[2]) for s in shapes]}"
        )
    return shapes


def _uniform_init(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


class DADLNetParams:
    """All learnable parameters plus BN running statistics."""

    def __init__(self, config: DADLNetConfig, input_shape, seed=0):
        self.config = config
        self.input_shape = tuple(input_shape)  # (l, n, m)
        self.block_shapes = schedule_shapes(config, input_shape)
        rng = np.random.default_rng(seed)
        self.tensors: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}

        in_ch = 1
        for i in range(4):
            f = config.filters[i]
            kt = config.block_temporal_kernel(i)
            kh, kw = config.spatial_kernels[i]
            ksize = kt * kh * kw
            self.tensors[f"conv{i}.weight"] = _uniform_init(
                rng, (f, in_ch, kt, kh, kw), in_ch * ksize, f * ksize)
            self.tensors[f"conv{i}.bias"] = Tensor(np.zeros(f), requires_grad=True)
            self.tensors[f"bn{i}.gamma"] = Tensor(np.ones(f), requires_grad=True)
            self.tensors[f"bn{i}.beta"] = Tensor(np.zeros(f), requires_grad=True)
            self.bn_states[f"bn{i}"] = BatchNormState(f)
            in_ch = f

        # attention operates on block-3 output
        _, h3, w3 = self.block_shapes[2]
        cells = h3 * w3
        f3 = config.filters[2]
        squeeze = f3 // config.se_ratio
        self.tensors["sa.weight"] = _uniform_init(rng, (cells, cells), cells, cells)
        self.tensors["sa.bias"] = Tensor(np.zeros(cells), requires_grad=True)
        self.tensors["se.w1"] = _uniform_init(rng, (f3, squeeze), f3, squeeze)
        self.tensors["se.b1"] = Tensor(np.zeros(squeeze), requires_grad=True)
        self.tensors["se.w2"] = _uniform_init(rng, (squeeze, f3), squeeze, f3)
        self.tensors["se.b2"] = Tensor(np.zeros(f3), requires_grad=True)

        f4 = config.filters[3]
        self.tensors["clf.weight"] = _uniform_init(rng, (f4, 1), f4, 1)
        self.tensors["clf.bias"] = Tensor(np.zeros(1), requires_grad=True)

    @property
    def feature_dim(self):
        return self.config.filters[3]

    def named_arrays(self):
        """All persistent state, checkpoint order: tensors then BN stats."""
        for name, t in self.tensors.items():
            yield name, t.data
        for name, st in self.bn_states.items():
            yield name + ".running_mean", st.running_mean
            yield name + ".running_var", st.running_var

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self.tensors.items():
            t.data = np.asarray(arrays[name], dtype=np.float64).reshape(t.shape)
        for name, st in self.bn_states.items():
            st.running_mean = np.asarray(arrays[name + ".running_mean"], dtype=np.float64)
            st.running_var = np.asarray(arrays[name + ".running_var"], dtype=np.float64)

    def parameter_count(self):
        return sum(t.size for t in self.tensors.values())

    def extractor_names(self):
        return [n for n in self.tensors if not n.startswith("clf.")]

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def snapshot(self):
        arrays = {name: arr.copy() for name, arr in self.named_arrays()}
        return arrays

    def restore(self, arrays):
        self.load_arrays(arrays)


def build(config: DADLNetConfig, input_shape, seed=0) -> DADLNetParams:
    return DADLNetParams(config, input_shape, seed=seed)


def conv_block_forward(x, block_idx, params: DADLNetParams, training, rng):
    cfg = params.config
    i = block_idx
    out = T.conv3d(x, params.tensors[f"conv{i}.weight"],
                   params.tensors[f"conv{i}.bias"],
                   (1,) + tuple(cfg.spatial_strides[i]))
    out = T.batch_norm(out, params.tensors[f"bn{i}.gamma"],
                       params.tensors[f"bn{i}.beta"], params.bn_states[f"bn{i}"],
                       training=training)
    out = T.elu(out)
    pool = cfg.temporal_pools[i]
    if pool > 1:
        out = T.avg_pool3d(out, (pool, 1, 1))
    return T.dropout(out, cfg.dropout_p, training, rng)


def spatial_attention(x, params: DADLNetParams):
    """[N,F,T,H,W] -> per-cell logits [N,1,1,H,W]."""
    n, _, _, h, w = x.shape
    pooled = T.tmean(T.tmean(x, axis=1), axis=1)  # over F then T -> [N,H,W]
    flat = T.reshape(pooled, (n, h * w))
    logits = T.fully_connected(flat, params.tensors["sa.weight"],
                               params.tensors["sa.bias"])
    return T.reshape(logits, (n, 1, 1, h, w))


def channel_attention_se(x, params: DADLNetParams, r=None):
    """[N,F,T,H,W] -> per-channel logits [N,F,1,1,1]."""
    n, f = x.shape[:2]
    r = r if r is not None else params.config.se_ratio
    if f % r != 0:
        raise ValueError(f"se_ratio {r} does not divide {f} feature maps")
    pooled = T.global_avg_pool(x)  # [N,F]
    hid = T.relu(T.fully_connected(pooled, params.tensors["se.w1"],
                                   params.tensors["se.b1"]))
    logits = T.fully_connected(hid, params.tensors["se.w2"],
                               params.tensors["se.b2"])
    return T.reshape(logits, (n, f, 1, 1, 1))


def attention_fuse(x, sa_logits, ca_logits):
    """Residual gating: x + x * sigmoid(sa + ca)."""
    gate = T.sigmoid(T.add(sa_logits, ca_logits))
    return T.add(x, T.mul(x, gate))


def extract_features(grid_batch, params: DADLNetParams, training=False, rng=None):
    """Grid batch [N, T, H, W] (or Grid3D) -> feature vectors [N, filters[3]]."""
    if isinstance(grid_batch, Tensor):
        x = grid_batch
    else:
        data = grid_batch.data if hasattr(grid_batch, "data") else grid_batch
        x = Tensor(np.asarray(data, dtype=np.float64))
    if x.ndim == 4:
        x = T.reshape(x, (x.shape[0], 1) + x.shape[1:])
    if x.shape[2:] != (params.input_shape[0], params.input_shape[1],
                       params.input_shape[2]):
        raise ValueError(
            f"input shape {x.shape[2:]} != build shape {params.input_shape}"
        )
    if training and rng is None:
        raise ValueError("training forward needs an rng for dropout")
    rng = rng or np.random.default_rng(0)
    for i in range(3):
        x = conv_block_forward(x, i, params, training, rng)
    sa = spatial_attention(x, params)
    ca = channel_attention_se(x, params)
    x = attention_fuse(x, sa, ca)
    x = conv_block_forward(x, 3, params, training, rng)
    return T.global_avg_pool(x)


def classify(features, params: DADLNetParams):
    """Feature vectors [N, F4] -> probabilities [N]."""
    logits = T.fully_connected(features, params.tensors["clf.weight"],
                               params.tensors["clf.bias"])
    return T.reshape(T.sigmoid(logits), (features.shape[0],))


def forward(grid_batch, params: DADLNetParams, training=False, rng=None):
    return classify(extract_features(grid_batch, params, training, rng), params)
