"""Patch CNN for vehicle type classification.

A LeNet-style network (two 5x5 conv/pool stages and three dense layers) on
small square RGB patches, trained with plain SGD on dihedral-augmented crops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .nncore import Conv2d, Dense, Flatten, LrSchedule, MaxPool2x2, ParamStore, ReLU, Sequential
from .resample import resize_bilinear

log = logging.getLogger(__name__)

VEDAI_11 = ("car", "camping_car", "tractor", "truck", "bike", "van", "bus", "ship", "plane",
            "pick_up", "other")
POTSDAM_4 = ("car", "van", "truck", "pick_up")
REJECTED = "rejected"

# VEDAI predictions projected onto the Potsdam vehicle subclasses; None = discarded
VEDAI_TO_POTSDAM = {name: (name if name in POTSDAM_4 else None) for name in VEDAI_11}


@dataclass(frozen=True)
class VehicleTaxonomy:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names) or not self.names:
            raise ValueError("taxonomy names must be non-empty and unique")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


VEDAI = VehicleTaxonomy(VEDAI_11)
POTSDAM = VehicleTaxonomy(POTSDAM_4)


def map_labels(labels, mapping=VEDAI_TO_POTSDAM) -> list[str | None]:
    return [mapping.get(lab) for lab in labels]


@dataclass
class PatchSample:
    image: np.ndarray
    label: int
    provenance: tuple[str, int] | None = None


def augment(sample: PatchSample) -> list[PatchSample]:
    """The 8 dihedral variants: rotations by 0, 90, 180, 270 deg, each also mirrored."""
    img = sample.image
    if img.shape[0] != img.shape[1]:
        raise ValueError(f"augment needs a square patch, got {img.shape[:2]}; resize first")
    out = []
    for k in range(4):
        rot = np.rot90(img, k, axes=(0, 1))
        out.append(PatchSample(rot.copy(), sample.label, sample.provenance))
        out.append(PatchSample(rot[:, ::-1].copy(), sample.label, sample.provenance))
    return out


def resize_patch(patch: np.ndarray, side: int) -> np.ndarray:
    if side < 1:
        raise ValueError("side must be positive")
    return resize_bilinear(patch, side, side)


class PatchClassifier:
    def __init__(self, taxonomy: VehicleTaxonomy, input_side: int = 32, seed: int = 0):
        s1 = input_side - 4
        s2 = s1 // 2 - 4
        if s1 <= 0 or s1 % 2 or s2 <= 0 or s2 % 2:
            raise ValueError(f"input side {input_side} incompatible with two conv5/pool stages")
        self.taxonomy = taxonomy
        self.input_side = input_side
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        st = self.store
        self.net = Sequential([
            Conv2d(st, "conv1", 3, 6, 5, 1, 0, rng), ReLU(), MaxPool2x2(),
            Conv2d(st, "conv2", 6, 16, 5, 1, 0, rng), ReLU(), MaxPool2x2(),
            Flatten(),
            Dense(st, "fc1", 16 * (s2 // 2) ** 2, 120, rng), ReLU(),
            Dense(st, "fc2", 120, 84, rng), ReLU(),
            Dense(st, "fc3", 84, len(taxonomy), rng),
        ])

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.net.forward(x.astype(nncore.get_dtype(), copy=False), train)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.net.backward(grad)


def to_input(patches: np.ndarray) -> np.ndarray:
    """(N, S, S, 3) patches in 0..255 -> (N, 3, S, S) network input."""
    x = np.asarray(patches, dtype=nncore.get_dtype()) / 255.0
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


@dataclass
class ClassifierTrainReport:
    losses: list[float]
    warnings: list[str] = field(default_factory=list)


def train_classifier(model: PatchClassifier, patches: np.ndarray, labels: np.ndarray,
                     epochs: int, batch_size: int, schedule: LrSchedule,
                     seed: int = 0) -> ClassifierTrainReport:
    """Minibatch SGD on pre-resized (N, S, S, 3) patches with integer labels."""
    n = len(patches)
    if n == 0:
        raise ValueError("empty training set")
    labels = np.asarray(labels)
    report = ClassifierTrainReport([])
    present = set(labels.tolist())
    for i, name in enumerate(model.taxonomy.names):
        if i not in present:
            report.warnings.append(f"class {name!r} absent from training data")
            log.warning(report.warnings[-1])
    x_all = to_input(patches)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits = model.forward(x_all[idx], train=True)
            loss, grad = nncore.softmax_cross_entropy(logits, labels[idx])
            model.backward(grad)
            nncore.sgd_step(model.store, schedule, epoch)
            total += loss
            batches += 1
        report.losses.append(total / batches)
        log.info("cls epoch %d lr %.4g loss %.4f", epoch, schedule.rate(epoch), report.losses[-1])
    return report


@dataclass
class Classification:
    label: str
    confidence: float
    probs: np.ndarray


def predict_probs(model: PatchClassifier, patches: np.ndarray) -> np.ndarray:
    logits = model.forward(to_input(patches)).astype(np.float64)
    return nncore.softmax(logits, axis=1)


def classify(model: PatchClassifier, patch: np.ndarray, reject_below: float | None = None) -> Classification:
    """Label one patch (resized to the model input side if needed)."""
    side = model.input_side
    if patch.shape[:2] != (side, side):
        patch = resize_patch(patch, side)
    probs = predict_probs(model, patch[None])[0]
    k = int(probs.argmax())
    conf = float(probs[k])
    label = model.taxonomy.names[k]
    if reject_below is not None and conf < reject_below:
        label = REJECTED
    return Classification(label, conf, probs)


@dataclass
class ClassReport:
    class_names: tuple[str, ...]
    per_class: dict[str, float | None]
    counts: dict[str, int]
    global_accuracy: float
    confusion: np.ndarray

    def format_table(self, row_name: str = "Model") -> str:
        heads = [n.replace("_", " ").capitalize() for n in self.class_names] + ["Global"]
        vals = [self.per_class[n] for n in self.class_names] + [self.global_accuracy]
        cells = ["n/a" if v is None else f"{100 * v:.0f}%" for v in vals]
        widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
        first = max(len("Class"), len(row_name))
        line1 = "Class".ljust(first) + " | " + " | ".join(h.rjust(w) for h, w in zip(heads, widths))
        line2 = row_name.ljust(first) + " | " + " | ".join(c.rjust(w) for c, w in zip(cells, widths))
        return line1 + "\n" + line2


def per_class_report(predictions, ground_truth, class_names) -> ClassReport:
    """Per-class accuracy (correct within class / class count) and global accuracy."""
    predictions, ground_truth = list(predictions), list(ground_truth)
    if len(predictions) != len(ground_truth):
        raise ValueError("predictions and ground truth differ in length")
    if not ground_truth:
        raise ValueError("empty evaluation set")
    names = tuple(class_names)
    pos = {n: i for i, n in enumerate(names)}
    cm = np.zeros((len(names), len(names) + 1), dtype=np.int64)  # last column: other/rejected
    for p, g in zip(predictions, ground_truth):
        cm[pos[g], pos.get(p, len(names))] += 1
    counts = {n: int(cm[i].sum()) for i, n in enumerate(names)}
    per_class = {n: (cm[i, i] / counts[n] if counts[n] else None) for i, n in enumerate(names)}
    glob = float(np.trace(cm[:, : len(names)]) / cm.sum())
    return ClassReport(names, per_class, counts, glob, cm)
