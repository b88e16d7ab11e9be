"""Symmetric encoder-decoder segmentation network with argmax unpooling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .nncore import (BatchNorm, Conv2d, LrSchedule, MaxPool2x2, ParamStore, ReLU,
                     Sequential, ShapeError, Unpool)

log = logging.getLogger(__name__)

POTSDAM_CLASSES = ("impervious_surface", "building", "tree", "low_vegetation", "car")
IGNORE_LABEL = 255


@dataclass(frozen=True)
class EncoderDecoderSpec:
    input_channels: int = 3
    block_channels: tuple[int, ...] = (16, 32, 64)
    convs_per_block: int = 2
    class_list: tuple[str, ...] = POTSDAM_CLASSES
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "class_list", tuple(self.class_list))
        if not self.block_channels or min(self.block_channels) < 1:
            raise ValueError("block_channels must be a non-empty list of positive ints")
        if self.convs_per_block < 1:
            raise ValueError("convs_per_block must be >= 1")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if len(set(self.class_list)) != len(self.class_list) or not self.class_list:
            raise ValueError("class_list must be non-empty with unique names")

    @property
    def divisor(self) -> int:
        return 2 ** len(self.block_channels)


@dataclass
class SemanticMap:
    """Per-pixel class probabilities, ``prob`` shaped (K, H, W)."""

    class_list: tuple[str, ...]
    prob: np.ndarray

    def __post_init__(self):
        self.class_list = tuple(self.class_list)
        if self.prob.ndim != 3 or self.prob.shape[0] != len(self.class_list):
            raise ShapeError(
                f"prob shape {self.prob.shape} does not match {len(self.class_list)} classes"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.prob.shape[1:]

    def labels(self) -> np.ndarray:
        # argmax picks the lowest class index on ties
        return self.prob.argmax(axis=0)

    def index(self, class_name: str) -> int:
        try:
            return self.class_list.index(class_name)
        except ValueError:
            raise KeyError(f"class {class_name!r} not in {self.class_list}") from None


@dataclass
class LoadReport:
    matched: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    unexpected: list[str] = field(default_factory=list)


class SegNet:
    """Encoder: [conv-bn-relu] x n then pool; decoder: unpool then [conv-bn-relu] x n.

    Decoder block ``j`` replays the pooling indices of encoder block ``k - 1 - j``
    (0-based), so the innermost decoder uses the innermost encoder's argmax.
    """

    def __init__(self, spec: EncoderDecoderSpec, seed: int = 0):
        self.spec = spec
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        k = spec.kernel
        pad = k // 2
        chans = spec.block_channels

        self.encoder: list[Sequential] = []
        self.pools: list[MaxPool2x2] = []
        in_ch = spec.input_channels
        for b, ch in enumerate(chans):
            layers = []
            for i in range(spec.convs_per_block):
                layers += [
                    Conv2d(self.store, f"encoder.{b}.conv{i}", in_ch, ch, k, 1, pad, rng),
                    BatchNorm(self.store, f"encoder.{b}.bn{i}", ch),
                    ReLU(),
                ]
                in_ch = ch
            self.encoder.append(Sequential(layers))
            self.pools.append(MaxPool2x2())

        self.decoder: list[Sequential] = []
        self.unpools: list[Unpool] = []
        for j, b in enumerate(reversed(range(len(chans)))):
            ch = chans[b]
            out_last = chans[b - 1] if b > 0 else chans[0]
            self.unpools.append(Unpool(self.pools[b]))
            layers = []
            in_ch = ch
            for i in range(spec.convs_per_block):
                out_ch = out_last if i == spec.convs_per_block - 1 else ch
                layers += [
                    Conv2d(self.store, f"decoder.{j}.conv{i}", in_ch, out_ch, k, 1, pad, rng),
                    BatchNorm(self.store, f"decoder.{j}.bn{i}", out_ch),
                    ReLU(),
                ]
                in_ch = out_ch
            self.decoder.append(Sequential(layers))
        self.head = Conv2d(self.store, "head", chans[0], len(spec.class_list), 1, 1, 0, rng)

    @property
    def class_list(self) -> tuple[str, ...]:
        return self.spec.class_list

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Logits (N, K, H, W) for an (N, C, H, W) batch."""
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ShapeError(f"expected (N, {self.spec.input_channels}, H, W), got {x.shape}")
        d = self.spec.divisor
        if x.shape[2] % d or x.shape[3] % d:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} not divisible by {d}")
        x = x.astype(nncore.get_dtype(), copy=False)
        for block, pool in zip(self.encoder, self.pools):
            x = pool.forward(block.forward(x, train))
        for unpool, block in zip(self.unpools, self.decoder):
            x = block.forward(unpool.forward(x), train)
        return self.head.forward(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = self.head.backward(grad)
        for unpool, block in zip(reversed(self.unpools), reversed(self.decoder)):
            grad = unpool.backward(block.backward(grad))
        for block, pool in zip(reversed(self.encoder), reversed(self.pools)):
            grad = block.backward(pool.backward(grad))
        return grad

    def encoder_names(self) -> list[str]:
        return [n for n in self.store.tensors() if n.startswith("encoder.")]


def build_model(spec: EncoderDecoderSpec, seed: int = 0) -> SegNet:
    return SegNet(spec, seed)


def load_encoder_weights(model: SegNet, weights) -> LoadReport:
    """Copy encoder tensors by name from a weight file (path or loaded mapping).

    Names outside the encoder are reported as unexpected and never applied;
    a shape mismatch on a matching name raises ``ShapeError``.
    """
    if isinstance(weights, dict):
        tensors = weights
    else:
        from .formats import load_weights

        tensors = load_weights(weights)
    enc = model.encoder_names()
    report = LoadReport()
    for name, value in tensors.items():
        if name in enc:
            model.store.assign(name, value)
            report.matched.append(name)
        else:
            report.unexpected.append(name)
    report.missing = [n for n in enc if n not in tensors]
    return report


def to_input(images: np.ndarray) -> np.ndarray:
    """(N, H, W, C) or (H, W, C) uint8/float images -> (N, C, H, W) float in [0, 1]."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    x = images.astype(nncore.get_dtype())
    if images.dtype == np.uint8:
        x /= 255.0
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def train_segmentation(model: SegNet, windows: np.ndarray, labels: np.ndarray, epochs: int,
                       batch_size: int, schedule: LrSchedule, seed: int = 0,
                       ignore_label: int = IGNORE_LABEL) -> list[float]:
    """Shuffled minibatch SGD; returns the mean training loss of every epoch.

    ``windows`` is (N, H, W, 3) and ``labels`` is (N, H, W).
    """
    n = len(windows)
    if n == 0:
        raise ValueError("empty training set")
    if labels.shape != windows.shape[:3]:
        raise ShapeError(f"labels {labels.shape} do not match windows {windows.shape}")
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits = model.forward(to_input(windows[idx]), train=True)
            loss, grad = nncore.softmax_cross_entropy(logits, labels[idx], ignore_label)
            model.backward(grad)
            nncore.sgd_step(model.store, schedule, epoch)
            total += loss
            batches += 1
        curve.append(total / batches)
        log.info("seg epoch %d lr %.4g loss %.4f", epoch, schedule.rate(epoch), curve[-1])
    return curve


def predict_batch(model: SegNet, windows: np.ndarray) -> np.ndarray:
    """Softmax probabilities (N, K, H, W) in infer mode."""
    return nncore.softmax(model.forward(to_input(windows), train=False), axis=1)


def predict_window(model: SegNet, window: np.ndarray) -> SemanticMap:
    return SemanticMap(model.class_list, predict_batch(model, window[None])[0])
