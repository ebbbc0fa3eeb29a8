"""Segmentation metrics: confusion-matrix accumulation, per-class IoU, mIoU."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError


@dataclass
class ConfusionMatrix:
    """N_c x N_c counts; rows are ground truth, columns prediction.

    Points whose truth label is in the ignore set are excluded entirely.
    """

    counts: np.ndarray
    ignore: frozenset[int] = field(default_factory=frozenset)

    @classmethod
    def empty(cls, num_classes: int, ignore: tuple[int, ...] = ()) -> "ConfusionMatrix":
        if num_classes < 1:
            raise ContractError("need at least one class")
        return cls(
            counts=np.zeros((num_classes, num_classes), dtype=np.int64),
            ignore=frozenset(int(i) for i in ignore),
        )

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Elementwise sum; accumulation order never matters."""
        if other.counts.shape != self.counts.shape or other.ignore != self.ignore:
            raise ContractError("cannot merge matrices with different layouts")
        return ConfusionMatrix(counts=self.counts + other.counts, ignore=self.ignore)


def accumulate(
    cm: ConfusionMatrix, truth: np.ndarray, predicted: np.ndarray
) -> ConfusionMatrix:
    """Add one scan's (truth, prediction) pairs to the matrix in place."""
    t = np.asarray(truth).astype(np.int64).ravel()
    p = np.asarray(predicted).astype(np.int64).ravel()
    if t.shape != p.shape:
        raise ContractError(f"label length mismatch: {t.shape} vs {p.shape}")
    n = cm.num_classes
    keep = np.ones(len(t), dtype=bool)
    for cls_id in cm.ignore:
        keep &= t != cls_id
    t, p = t[keep], p[keep]
    if len(t) and (t.min() < 0 or t.max() >= n or p.min() < 0 or p.max() >= n):
        raise ContractError("labels outside [0, num_classes) and not ignored")
    cm.counts += np.bincount(t * n + p, minlength=n * n).reshape(n, n)
    return cm


def iou(cm: ConfusionMatrix, class_id: int) -> float:
    """TP / (TP + FP + FN); NaN when the class has a zero denominator."""
    if class_id in cm.ignore:
        raise ContractError(f"class {class_id} is ignored")
    tp = int(cm.counts[class_id, class_id])
    fp = int(cm.counts[:, class_id].sum()) - tp
    fn = int(cm.counts[class_id, :].sum()) - tp
    denom = tp + fp + fn
    if denom == 0:
        return math.nan
    return tp / denom


def miou(cm: ConfusionMatrix, undefined_as_zero: bool = False) -> float:
    """Mean IoU over classes with a defined ratio.

    Classes with a zero denominator are excluded by default; pass
    undefined_as_zero=True for the convention that counts them as 0.
    """
    values = []
    for c in range(cm.num_classes):
        if c in cm.ignore:
            continue
        v = iou(cm, c)
        if math.isnan(v):
            if undefined_as_zero:
                values.append(0.0)
        else:
            values.append(v)
    if not values:
        raise UndefinedMetricError("no class has a defined IoU")
    return float(np.mean(values))
