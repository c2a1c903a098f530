"""Confusion matrix and the OA / AA / Kappa summary metrics."""
import csv
import io
import warnings

import numpy as np

from .errors import DomainError, ShapeError


class ConfusionMatrix:
    """``counts[true - 1, pred - 1]`` over classes ``1..K``."""

    def __init__(self, num_classes, counts=None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes) or (self.counts < 0).any():
            raise ShapeError("counts must be a non-negative K x K matrix")

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, predictions, labels, mask):
        predictions, labels, mask = np.asarray(predictions), np.asarray(labels), np.asarray(mask, bool)
        if not predictions.shape == labels.shape == mask.shape:
            raise ShapeError(f"shape mismatch: predictions {predictions.shape}, "
                             f"labels {labels.shape}, mask {mask.shape}")
        t = labels[mask].astype(np.int64)
        p = predictions[mask].astype(np.int64)
        k = self.num_classes
        if ((p < 1) | (p > k)).any():
            raise DomainError(f"prediction outside 1..{k} on an evaluated pixel")
        if ((t < 1) | (t > k)).any():
            raise DomainError(f"label outside 1..{k} on an evaluated pixel")
        np.add.at(self.counts, (t - 1, p - 1), 1)
        return self

    def __add__(self, other):
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def _require_total(cm):
    if cm.total == 0:
        raise DomainError("confusion matrix is empty (no evaluated pixels)")


def overall_accuracy(cm):
    _require_total(cm)
    return float(np.trace(cm.counts) / cm.total)


def per_class(cm):
    """Per-class recall; NaN for classes with no test pixels."""
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, diag / np.maximum(rows, 1), np.nan)


def average_accuracy(cm):
    _require_total(cm)
    acc = per_class(cm)
    empty = np.isnan(acc)
    if empty.any():
        warnings.warn(f"classes {(np.nonzero(empty)[0] + 1).tolist()} have no test pixels; "
                      "excluded from AA", stacklevel=2)
    return float(np.nanmean(acc))


def kappa(cm):
    """Cohen's kappa; 1 when chance agreement is certain and observed is perfect, else 0."""
    _require_total(cm)
    n = float(cm.total)
    po = np.trace(cm.counts) / n
    pe = float((cm.counts.sum(axis=1).astype(np.float64) * cm.counts.sum(axis=0)).sum() / (n * n))
    if pe == 1.0:
        return 1.0 if po == 1.0 else 0.0
    return float((po - pe) / (1.0 - pe))


def report_text(cm, class_names=None):
    acc = per_class(cm)
    names = class_names or [f"class {k}" for k in range(1, cm.num_classes + 1)]
    lines = [f"{'class':<24}{'test':>8}{'acc(%)':>10}"]
    for name, n, a in zip(names, cm.counts.sum(axis=1), acc):
        shown = "-" if np.isnan(a) else f"{100 * a:.2f}"
        lines.append(f"{name:<24}{n:>8}{shown:>10}")
    lines.append(f"{'OA(%)':<24}{'':>8}{100 * overall_accuracy(cm):>10.2f}")
    lines.append(f"{'AA(%)':<24}{'':>8}{100 * average_accuracy(cm):>10.2f}")
    lines.append(f"{'Kappa':<24}{'':>8}{kappa(cm):>10.4f}")
    return "\n".join(lines)


def report_csv(cm, class_names=None):
    acc = per_class(cm)
    names = class_names or [f"class {k}" for k in range(1, cm.num_classes + 1)]
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["metric", "value"])
    for name, a in zip(names, acc):
        out.writerow([name, "" if np.isnan(a) else repr(float(a))])
    out.writerow(["OA", repr(overall_accuracy(cm))])
    out.writerow(["AA", repr(average_accuracy(cm))])
    out.writerow(["Kappa", repr(kappa(cm))])
    return buf.getvalue()
