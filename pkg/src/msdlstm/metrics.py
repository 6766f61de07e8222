"""Pixel accuracy and mean IoU over an integer confusion matrix.

Rows index the true class, columns the predicted class.  Classes with an
empty union (absent from both truth and prediction) are excluded from the
mIoU mean.
"""

import numpy as np

from .errors import ValidationError


class ConfusionMatrix:
    def __init__(self, num_classes):
        if num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, truth, pred):
        truth = np.asarray(truth).ravel()
        pred = np.asarray(pred).ravel()
        if truth.shape != pred.shape:
            raise ValidationError("truth and prediction sizes differ")
        n = self.num_classes
        if truth.min() < 0 or truth.max() >= n or pred.min() < 0 or pred.max() >= n:
            raise ValidationError(f"class ids must lie in [0, {n})")
        flat = np.bincount(truth.astype(np.int64) * n + pred, minlength=n * n)
        self.counts += flat.reshape(n, n)
        return self

    def merge(self, other):
        self.counts += other.counts
        return self

    @property
    def total(self):
        return int(self.counts.sum())


def accuracy(cm):
    if cm.total == 0:
        raise ValidationError("no pixels recorded")
    return float(np.trace(cm.counts)) / cm.total


def mean_iou(cm):
    if cm.total == 0:
        raise ValidationError("no pixels recorded")
    tp = np.diag(cm.counts).astype(float)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - np.diag(cm.counts)
    present = union > 0
    return float((tp[present] / union[present]).mean())


def collapse_binary(cm):
    """Fold a multi-class matrix into rain-or-not (class 0 vs the rest)."""
    c = cm.counts
    out = ConfusionMatrix(2)
    out.counts[0, 0] = c[0, 0]
    out.counts[0, 1] = c[0, 1:].sum()
    out.counts[1, 0] = c[1:, 0].sum()
    out.counts[1, 1] = c[1:, 1:].sum()
    return out
