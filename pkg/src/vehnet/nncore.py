"""Minimal differentiable layers and a plain SGD optimizer.

Tensors are plain ``numpy.ndarray`` objects in NCHW layout. Every layer keeps
whatever it needs from ``forward`` in a cache and consumes it in ``backward``;
parameter gradients are accumulated into the owning :class:`ParamStore`.

Convolution is cross-correlation (no kernel flip). Max pooling records, for
every pooled cell, the flat offset of its maximum inside the ``H*W`` plane of
the input; ties go to the smallest offset.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import as_strided

_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes do not fit an operation."""


class NonFiniteGradientError(FloatingPointError):
    """Raised by :func:`sgd_step` when a gradient contains NaN or inf."""


def get_dtype():
    return _DTYPE


def set_dtype(dtype) -> None:
    """Select the global float precision used for new parameters and inputs."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch global precision, e.g. ``with precision(np.float64)``."""
    old = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(old)


# ---------------------------------------------------------------------------
# Parameters, schedule, optimizer
# ---------------------------------------------------------------------------


class ParamStore:
    """Named parameters with matching gradients, plus non-trainable buffers.

    Buffers (batch-norm running statistics) are saved and loaded with the
    parameters but never touched by the optimizer.
    """

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.buffers[name] = value
        return value

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def tensors(self) -> dict[str, np.ndarray]:
        """All saveable tensors (parameters then buffers), in insertion order."""
        out = dict(self.params)
        out.update(self.buffers)
        return out

    def assign(self, name: str, value: np.ndarray) -> None:
        """Overwrite a parameter or buffer in place, keeping its dtype."""
        target = self.params.get(name)
        if target is None:
            target = self.buffers.get(name)
        if target is None:
            raise KeyError(name)
        value = np.asarray(value)
        if value.shape != target.shape:
            raise ShapeError(
                f"{name}: stored shape {target.shape} != incoming shape {value.shape}"
            )
        target[...] = value

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.buffers

    def __len__(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class LrSchedule:
    """Step schedule: ``base_rate / drop_factor ** (#drops <= epoch)``."""

    base_rate: float
    drop_epochs: tuple[int, ...] = ()
    drop_factor: float = 10.0

    def __post_init__(self):
        if self.base_rate < 0:
            raise ValueError("base_rate must be non-negative")
        if self.drop_factor <= 0:
            raise ValueError("drop_factor must be positive")
        object.__setattr__(self, "drop_epochs", tuple(sorted(int(e) for e in self.drop_epochs)))

    def rate(self, epoch: int) -> float:
        n = sum(1 for e in self.drop_epochs if e <= epoch)
        return self.base_rate / self.drop_factor**n


def sgd_step(store: ParamStore, schedule: LrSchedule, epoch: int) -> ParamStore:
    """Vanilla SGD update ``p -= rate(epoch) * g``; gradients are zeroed afterwards."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    lr = schedule.rate(epoch)
    for name, p in store.params.items():
        p -= p.dtype.type(lr) * store.grads[name]
    store.zero_grad()
    return store


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(_DTYPE)


# ---------------------------------------------------------------------------
# Functional kernels
# ---------------------------------------------------------------------------


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0):
    """2-D cross-correlation.

    Parameters
    ----------
    x : (N, C, H, W) array
    weights : (O, C, kH, kW) array
    bias : (O,) array

    Returns
    -------
    out : (N, O, Ho, Wo) array
    cache : tuple for :func:`conv2d_backward`
    """
    if x.ndim != 4 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs weights {weights.shape}"
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"conv2d bias {bias.shape} does not match weights {weights.shape}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d needs stride >= 1 and pad >= 0")
    n, c, h, w = x.shape
    o, _, kh, kw = weights.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {weights.shape} larger than padded input {x.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    # columns laid out (N, C*kH*kW, Ho*Wo) so the matmul lands directly in NCHW
    cols = _windows(xp, kh, kw, stride, ho, wo).transpose(0, 1, 4, 5, 2, 3)
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(weights.reshape(o, -1), cols) + bias[:, None]
    cache = (x.shape, cols, weights, stride, pad)
    return out.reshape(n, o, ho, wo), cache


def conv2d_backward(grad_out: np.ndarray, cache):
    """Gradients of :func:`conv2d` w.r.t. input, weights and bias."""
    if cache is None:
        raise RuntimeError("conv2d_backward called without a forward cache")
    x_shape, cols, weights, stride, pad = cache
    n, c, h, w = x_shape
    o, _, kh, kw = weights.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if grad_out.shape != (n, o, ho, wo):
        raise ShapeError(f"grad_out {grad_out.shape} != forward output {(n, o, ho, wo)}")
    g = grad_out.reshape(n, o, ho * wo)
    grad_w = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.shape)
    grad_b = g.sum(axis=(0, 2))
    dcols = np.matmul(weights.reshape(o, -1).T, g).reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
    grad_x = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def batchnorm(x, gamma, beta, running_mean, running_var, train: bool, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over (N, H, W) or (N,) axes.

    In train mode the running statistics are updated in place.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm gamma/beta {gamma.shape}/{beta.shape} vs {c} channels")
    if eps <= 0:
        raise ValueError("eps must be positive")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if train:
        if x.shape[0] == 0:
            raise ShapeError("batchnorm in train mode needs a non-empty batch")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // c
        unbiased = var * (count / (count - 1)) if count > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    cache = (xhat, inv_std, gamma, axes, bshape, train)
    return out.astype(x.dtype, copy=False), cache


def batchnorm_backward(grad_out, cache):
    xhat, inv_std, gamma, axes, bshape, train = cache
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    gx = grad_out * gamma.reshape(bshape)
    if train:
        m = xhat.size // xhat.shape[1]
        grad_x = (
            inv_std.reshape(bshape)
            / m
            * (m * gx - gx.sum(axis=axes).reshape(bshape) - xhat * (gx * xhat).sum(axis=axes).reshape(bshape))
        )
    else:
        grad_x = gx * inv_std.reshape(bshape)
    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad_out * mask


@dataclass(frozen=True)
class PoolIndices:
    """Argmax bookkeeping of a 2x2 max pooling.

    ``index[n, c, i, j]`` is the flat offset (``row * W + col``) of the winning
    input cell inside the ``H x W`` input plane.
    """

    index: np.ndarray
    input_hw: tuple[int, int]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.index.shape

    def validate(self) -> None:
        h, w = self.input_hw
        idx = self.index
        rows, cols = idx // w, idx % w
        ii = np.arange(idx.shape[2]).reshape(1, 1, -1, 1)
        jj = np.arange(idx.shape[3]).reshape(1, 1, 1, -1)
        ok = (idx >= 0) & (idx < h * w) & (rows // 2 == ii) & (cols // 2 == jj)
        if not np.all(ok):
            bad = tuple(int(v) for v in np.argwhere(~ok)[0])
            raise ValueError(f"pool index {int(idx[bad])} at cell {bad} lies outside its window")


def maxpool2x2(x: np.ndarray):
    """2x2/stride-2 max pooling returning values and :class:`PoolIndices`."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial size, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum, i.e. the smallest in-window (and plane) offset
    local = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(h // 2).reshape(1, 1, -1, 1) + local // 2
    cols = 2 * np.arange(w // 2).reshape(1, 1, 1, -1) + local % 2
    return np.ascontiguousarray(out), PoolIndices(rows * w + cols, (h, w))


def argmax_unpool(x: np.ndarray, indices: PoolIndices, out_shape=None, check: bool = True):
    """Place every value at its recorded argmax offset; zeros elsewhere."""
    if x.shape != indices.shape:
        raise ShapeError(f"unpool input {x.shape} != indices {indices.shape}")
    n, c, ph, pw = x.shape
    h, w = indices.input_hw
    if out_shape is not None and tuple(out_shape[-2:]) != (h, w):
        raise ShapeError(f"unpool out_shape {tuple(out_shape)} != recorded input size {(h, w)}")
    if (h // 2, w // 2) != (ph, pw):
        raise ShapeError(f"unpool target {h}x{w} is not twice {ph}x{pw}")
    if check:
        indices.validate()
    out = np.zeros((n, c, h * w), dtype=x.dtype)
    np.put_along_axis(out, indices.index.reshape(n, c, -1), x.reshape(n, c, -1), axis=2)
    return out.reshape(n, c, h, w)


def argmax_unpool_backward(grad_out: np.ndarray, indices: PoolIndices) -> np.ndarray:
    n, c = grad_out.shape[:2]
    flat = grad_out.reshape(n, c, -1)
    g = np.take_along_axis(flat, indices.index.reshape(n, c, -1), axis=2)
    return g.reshape(indices.shape)


def maxpool2x2_backward(grad_out: np.ndarray, indices: PoolIndices) -> np.ndarray:
    return argmax_unpool(grad_out, indices, check=False)


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, ignore_label: int | None = None):
    """Mean pixel-wise (or sample-wise) negative log-likelihood.

    ``logits`` is (N, K, ...) and ``labels`` is the matching (N, ...) integer
    map. Returns ``(loss, grad_logits)``; ignored positions get zero gradient.
    """
    labels = np.asarray(labels)
    if logits.shape[:1] + logits.shape[2:] != labels.shape:
        raise ShapeError(f"logits {logits.shape} do not match labels {labels.shape}")
    k = logits.shape[1]
    valid = np.ones(labels.shape, dtype=bool) if ignore_label is None else labels != ignore_label
    count = int(valid.sum())
    if count == 0:
        raise ValueError("every position is ignored; loss undefined")
    safe = np.where(valid, labels, 0)
    if safe.min() < 0 or safe.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}) or equal ignore_label")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -float(picked[valid].sum()) / count
    grad = np.exp(logp)
    onehot = np.zeros_like(grad)
    np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
    grad = (grad - onehot) * (valid[:, None] / count)
    return loss, grad.astype(logits.dtype, copy=False)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    """Base class: ``forward(x, train)`` then ``backward(grad)``."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    __call__ = forward


class Conv2d(Layer):
    def __init__(self, store: ParamStore, name: str, in_ch: int, out_ch: int,
                 kernel: int = 3, stride: int = 1, pad: int = 1,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.store = store
        self.name = name
        self.stride, self.pad = stride, pad
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.w = store.add(f"{name}.weight",
                           glorot_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, fan_out))
        self.b = store.add(f"{name}.bias", np.zeros(out_ch, dtype=_DTYPE))
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = conv2d(x, self.w, self.b, self.stride, self.pad)
        return out

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward before forward")
        gx, gw, gb = conv2d_backward(grad, self._cache)
        self.store.grads[f"{self.name}.weight"] += gw
        self.store.grads[f"{self.name}.bias"] += gb
        self._cache = None
        return gx


class BatchNorm(Layer):
    def __init__(self, store: ParamStore, name: str, channels: int,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.store = store
        self.name = name
        self.momentum, self.eps = momentum, eps
        self.gamma = store.add(f"{name}.gamma", np.ones(channels, dtype=_DTYPE))
        self.beta = store.add(f"{name}.beta", np.zeros(channels, dtype=_DTYPE))
        self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(channels, dtype=_DTYPE))
        self.running_var = store.add_buffer(f"{name}.running_var", np.ones(channels, dtype=_DTYPE))
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = batchnorm(x, self.gamma, self.beta, self.running_mean,
                                     self.running_var, train, self.momentum, self.eps)
        return out

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward before forward")
        gx, gg, gb = batchnorm_backward(grad, self._cache)
        self.store.grads[f"{self.name}.gamma"] += gg
        self.store.grads[f"{self.name}.beta"] += gb
        self._cache = None
        return gx


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        out, self._mask = relu(x)
        return out

    def backward(self, grad):
        return relu_backward(grad, self._mask)


class MaxPool2x2(Layer):
    """Pooling layer; the latest indices are exposed as ``self.indices``."""

    def __init__(self):
        self.indices: PoolIndices | None = None

    def forward(self, x, train=False):
        out, self.indices = maxpool2x2(x)
        return out

    def backward(self, grad):
        return maxpool2x2_backward(grad, self.indices)


class Unpool(Layer):
    """Argmax unpooling bound to the pooling layer whose indices it replays."""

    def __init__(self, source: MaxPool2x2):
        self.source = source
        self._indices = None

    def forward(self, x, train=False):
        if self.source.indices is None:
            raise RuntimeError("unpool before its paired pooling layer ran")
        self._indices = self.source.indices
        return argmax_unpool(x, self._indices, check=False)

    def backward(self, grad):
        return argmax_unpool_backward(grad, self._indices)


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    def __init__(self, store: ParamStore, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.store, self.name = store, name
        self.w = store.add(f"{name}.weight",
                           glorot_uniform(rng, (out_features, in_features), in_features, out_features))
        self.b = store.add(f"{name}.bias", np.zeros(out_features, dtype=_DTYPE))
        self._x = None

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.w.shape[1]:
            raise ShapeError(f"{self.name}: input {x.shape} vs weight {self.w.shape}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad):
        if self._x is None:
            raise RuntimeError(f"{self.name}: backward before forward")
        self.store.grads[f"{self.name}.weight"] += grad.T @ self._x
        self.store.grads[f"{self.name}.bias"] += grad.sum(axis=0)
        gx = grad @ self.w
        self._x = None
        return gx


@dataclass
class Sequential(Layer):
    layers: list = field(default_factory=list)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
