"""Dense tensors with reverse-mode autodiff over the operator set the network needs.

Everything is float64 numpy under the hood.  Each op records a backward
closure on its output; ``Tensor.backward()`` topologically sorts the graph
and accumulates gradients into every ``requires_grad`` leaf.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_children", "_backward")

    def __init__(self, data, requires_grad=False, _children=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._children = tuple(_children)
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in node._children:
                stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum-reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, children, backward):
    req = any(c.requires_grad for c in children)
    return Tensor(data, requires_grad=req,
                  _children=children if req else (),
                  _backward=backward if req else None)


# ---------------------------------------------------------------------------
# elementwise

def add(x, y):
    x, y = _as_tensor(x), _as_tensor(y)
    try:
        out_data = x.data + y.data
    except ValueError:
        raise ShapeError(f"add: shapes {x.shape} and {y.shape} do not broadcast")

    def backward(g):
        if x.requires_grad:
            x._accumulate(_unbroadcast(g, x.shape))
        if y.requires_grad:
            y._accumulate(_unbroadcast(g, y.shape))

    return _make(out_data, (x, y), backward)


def mul(x, y):
    x, y = _as_tensor(x), _as_tensor(y)
    try:
        out_data = x.data * y.data
    except ValueError:
        raise ShapeError(f"mul: shapes {x.shape} and {y.shape} do not broadcast")

    def backward(g):
        if x.requires_grad:
            x._accumulate(_unbroadcast(g * y.data, x.shape))
        if y.requires_grad:
            y._accumulate(_unbroadcast(g * x.data, y.shape))

    return _make(out_data, (x, y), backward)


def neg(x):
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accumulate(-g)

    return _make(-x.data, (x,), backward)


def exp(x):
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data)

    return _make(out_data, (x,), backward)


def log(x):
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return _make(np.log(x.data), (x,), backward)


def clip(x, lo, hi):
    """Clamp values; gradient passes through only inside the open interval."""
    x = _as_tensor(x)
    mask = (x.data > lo) & (x.data < hi)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(np.clip(x.data, lo, hi), (x,), backward)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


def elu(x, alpha=1.0):
    x = _as_tensor(x)
    neg_part = alpha * np.expm1(np.minimum(x.data, 0.0))
    out_data = np.where(x.data >= 0, x.data, neg_part)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.where(x.data >= 0, 1.0, neg_part + alpha))

    return _make(out_data, (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    # two-branch form stays finite for |x| up to the float64 exp range
    pos = x.data >= 0
    z = np.exp(-np.abs(x.data))
    out_data = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# reductions / reshaping

def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(out_data, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = 1
        for a in axes:
            count *= x.shape[a]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape):
    x = _as_tensor(x)
    orig = x.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(orig))

    return _make(x.data.reshape(shape), (x,), backward)


def matmul(x, y):
    x, y = _as_tensor(x), _as_tensor(y)
    if x.shape[-1] != y.shape[0]:
        raise ShapeError(f"matmul: inner dims {x.shape[-1]} != {y.shape[0]}")
    out_data = x.data @ y.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ y.data.T)
        if y.requires_grad:
            y._accumulate(x.data.T @ g)

    return _make(out_data, (x, y), backward)


def transpose(x):
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.T)

    return _make(x.data.T, (x,), backward)


def fully_connected(x, w, b):
    """x[N,D] @ w[D,K] + b[K]."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"fully_connected: input dim {x.shape[1]} != weight rows {w.shape[0]}"
        )
    if w.shape[1] != b.shape[0]:
        raise ShapeError(
            f"fully_connected: weight cols {w.shape[1]} != bias dim {b.shape[0]}"
        )
    out_data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(out_data, (x, w, b), backward)


# ---------------------------------------------------------------------------
# convolution / pooling

def conv3d(x, weight, bias, stride=(1, 1, 1)):
    """Valid 3D convolution. x[N,C,T,H,W], weight[F,C,kt,kh,kw], bias[F]."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 5 or weight.ndim != 5:
        raise ShapeError("conv3d expects 5-d input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv3d: input channels (axis 1) {x.shape[1]} != weight channels {weight.shape[1]}"
        )
    kdims = weight.shape[2:]
    axis_names = ("time (axis 2)", "height (axis 3)", "width (axis 4)")
    for name, k, d in zip(axis_names, kdims, x.shape[2:]):
        if k > d:
            raise ShapeError(f"conv3d: kernel {k} exceeds input {d} on {name}")
    st, sh, sw = stride
    kt, kh, kw = kdims
    n, c = x.shape[:2]
    f = weight.shape[0]
    win = sliding_window_view(x.data, kdims, axis=(2, 3, 4))
    win = win[:, :, ::st, ::sh, ::sw]
    nt, nh, nw = win.shape[2:5]
    # im2col: one big matmul beats a strided einsum by a wide margin
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    cols = cols.reshape(n * nt * nh * nw, c * kt * kh * kw)
    wmat = weight.data.reshape(f, -1)
    out_data = (cols @ wmat.T).reshape(n, nt, nh, nw, f)
    out_data = np.ascontiguousarray(out_data.transpose(0, 4, 1, 2, 3))
    out_data += bias.data[None, :, None, None, None]

    def backward(g):
        gmat = g.transpose(0, 2, 3, 4, 1).reshape(-1, f)
        if weight.requires_grad:
            weight._accumulate((gmat.T @ cols).reshape(weight.shape))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, nt, nh, nw, c, kt, kh, kw)
            gcols = gcols.transpose(0, 4, 1, 2, 3, 5, 6, 7)
            gx = np.zeros_like(x.data)
            for i in range(kt):
                for j in range(kh):
                    for k in range(kw):
                        gx[:, :,
                           i:i + st * nt:st,
                           j:j + sh * nh:sh,
                           k:k + sw * nw:sw] += gcols[..., i, j, k]
            x._accumulate(gx)

    return _make(out_data, (x, weight, bias), backward)


def avg_pool3d(x, window):
    """Non-overlapping average pooling; trailing remainders truncated."""
    x = _as_tensor(x)
    pt, ph, pw = window
    if pt < 1 or ph < 1 or pw < 1:
        raise ShapeError(f"avg_pool3d: window dims must be >= 1, got {window}")
    n, c, t, h, w = x.shape
    ot, oh, ow = t // pt, h // ph, w // pw
    if ot < 1 or oh < 1 or ow < 1:
        raise ShapeError(f"avg_pool3d: window {window} larger than input {(t, h, w)}")
    cropped = x.data[:, :, : ot * pt, : oh * ph, : ow * pw]
    blocks = cropped.reshape(n, c, ot, pt, oh, ph, ow, pw)
    out_data = blocks.mean(axis=(3, 5, 7))
    scale = 1.0 / (pt * ph * pw)

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        expanded = (g[:, :, :, None, :, None, :, None] * scale)
        gx[:, :, : ot * pt, : oh * ph, : ow * pw] = np.broadcast_to(
            expanded, (n, c, ot, pt, oh, ph, ow, pw)
        ).reshape(n, c, ot * pt, oh * ph, ow * pw)
        x._accumulate(gx)

    return _make(out_data, (x,), backward)


def global_avg_pool(x):
    """Mean over every axis after the first two: [N,F,...] -> [N,F]."""
    x = _as_tensor(x)
    axes = tuple(range(2, x.ndim))
    return tmean(x, axis=axes)


def dropout(x, p, training, rng):
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        def backward_id(g):
            if x.requires_grad:
                x._accumulate(g)
        return _make(x.data.copy(), (x,), backward_id)
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    mask = keep * scale

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(x.data * mask, (x,), backward)


class BatchNormState:
    """Running statistics for one batch-norm layer (plain arrays, not traced)."""

    def __init__(self, num_features):
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def copy(self):
        out = BatchNormState(len(self.running_mean))
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batch_norm(x, gamma, beta, state, eps=1e-5, momentum=0.9, training=True):
    """Per-feature normalization over all axes except axis 1."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    f = x.shape[1]
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({f},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, f) + (1,) * (x.ndim - 2)

    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm: training mode needs batch size >= 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean = momentum * state.running_mean + (1 - momentum) * mean
        state.running_var = momentum * state.running_var + (1 - momentum) * var
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    m = x.size // f  # samples per feature

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gs = g * gamma.data.reshape(bshape)
            if training:
                # gradient through the batch statistics
                mean_gs = gs.mean(axis=axes).reshape(bshape)
                mean_gs_xhat = (gs * xhat).mean(axis=axes).reshape(bshape)
                gx = inv_std.reshape(bshape) * (gs - mean_gs - xhat * mean_gs_xhat)
            else:
                gx = gs * inv_std.reshape(bshape)
            x._accumulate(gx)

    return _make(out_data, (x, gamma, beta), backward)
