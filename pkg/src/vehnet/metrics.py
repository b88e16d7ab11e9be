"""Pixel-level segmentation scores.

Confusion matrices have ground truth on rows and predictions on columns.
Pixels near ground-truth class boundaries and pixels of ignored classes can be
left out of the tally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class EmptyEvaluationError(ValueError):
    """No pixel survived the ignore rules."""


def boundary_ignore_mask(gt: np.ndarray, radius: int = 3) -> np.ndarray:
    """True where some pixel within Chebyshev distance ``radius`` has another label."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    gt = np.asarray(gt)
    if radius == 0:
        return np.zeros(gt.shape, dtype=bool)
    size = 2 * radius + 1
    # 'nearest' replicates edge pixels, which already lie inside the window
    hi = ndimage.maximum_filter(gt, size=size, mode="nearest")
    lo = ndimage.minimum_filter(gt, size=size, mode="nearest")
    return hi != lo


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_list: tuple[str, ...]
    ignored: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.class_list != other.class_list:
            raise ValueError("cannot merge confusion matrices over different class lists")
        return ConfusionMatrix(self.counts + other.counts, self.class_list, self.ignored + other.ignored)


def confusion(pred: np.ndarray, gt: np.ndarray, class_list, ignore_classes=(),
              ignore_mask: np.ndarray | None = None) -> ConfusionMatrix:
    """Tally (gt, pred) pairs over pixels that survive the ignore rules.

    ``ignore_classes`` holds class names or indices; they are ignored when they
    appear in the ground truth.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    class_list = tuple(class_list)
    k = len(class_list)
    keep = np.ones(gt.shape, dtype=bool)
    for c in ignore_classes:
        idx = class_list.index(c) if isinstance(c, str) else int(c)
        keep &= gt != idx
    if ignore_mask is not None:
        keep &= ~np.asarray(ignore_mask, dtype=bool)
    g, p = gt[keep].astype(np.int64), pred[keep].astype(np.int64)
    if g.size and (g.min() < 0 or g.max() >= k or p.min() < 0 or p.max() >= k):
        raise ValueError(f"labels outside [0, {k})")
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, class_list, int(gt.size - keep.sum()))


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


@dataclass
class EvalReport:
    class_list: tuple[str, ...]
    overall_accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    iou: np.ndarray
    present: np.ndarray
    mean_iou: float
    evaluated: int
    ignored: int

    def to_keyvalue(self) -> str:
        lines = [
            f"overall_accuracy={self.overall_accuracy:.6f}",
            f"mean_iou={self.mean_iou:.6f}",
            f"evaluated_pixels={self.evaluated}",
            f"ignored_pixels={self.ignored}",
        ]
        for i, name in enumerate(self.class_list):
            if not self.present[i]:
                lines.append(f"{name}.present=0")
                continue
            lines += [
                f"{name}.precision={self.precision[i]:.6f}",
                f"{name}.recall={self.recall[i]:.6f}",
                f"{name}.f1={self.f1[i]:.6f}",
                f"{name}.iou={self.iou[i]:.6f}",
            ]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        width = max(len(n) for n in self.class_list)
        rows = [f"{'class'.ljust(width)}  precision  recall  f1      iou"]
        for i, name in enumerate(self.class_list):
            if not self.present[i]:
                rows.append(f"{name.ljust(width)}  (absent from ground truth)")
                continue
            rows.append(f"{name.ljust(width)}  {self.precision[i]:9.4f}  {self.recall[i]:6.4f}"
                        f"  {self.f1[i]:.4f}  {self.iou[i]:.4f}")
        rows.append(f"overall accuracy {self.overall_accuracy:.4f}, mean IoU {self.mean_iou:.4f}")
        return "\n".join(rows) + "\n"


def f1_score(precision, recall):
    precision, recall = np.asarray(precision, float), np.asarray(recall, float)
    return _ratio(2 * precision * recall, precision + recall)


def derive_report(cm: ConfusionMatrix) -> EvalReport:
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise EmptyEvaluationError("confusion matrix is empty; every pixel was ignored")
    tp = np.diag(c)
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    precision = _ratio(tp, cols)
    recall = _ratio(tp, rows)
    f1 = f1_score(precision, recall)
    iou = _ratio(tp, rows + cols - tp)
    present = rows > 0
    return EvalReport(cm.class_list, float(tp.sum() / total), precision, recall, f1, iou,
                      present, float(iou[present].mean()), int(total), cm.ignored)


def instance_iou(gt_instances, pred_instances) -> list[float]:
    """IoU of each ground-truth instance against the union of overlapping predictions."""
    pred_owner: dict[tuple[int, int], int] = {}
    for j, inst in enumerate(pred_instances):
        for px in inst.pixels:
            pred_owner[px] = j
    out = []
    for g in gt_instances:
        gpx = g.pixels
        hits = {pred_owner[p] for p in gpx if p in pred_owner}
        union_pred = set().union(*(pred_instances[j].pixels for j in hits)) if hits else set()
        inter = len(gpx & union_pred)
        out.append(inter / len(gpx | union_pred))
    return out
