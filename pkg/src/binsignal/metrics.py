"""Confusion matrices, macro precision/recall/F1, and precision-recall curves."""
import csv
import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConfusionMatrix",
    "PRCurve",
    "confusion_matrix",
    "per_class_scores",
    "macro_scores",
    "pr_curve",
    "partial_auc",
    "metrics_csv",
    "pr_curve_csv",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise ValueError(f"confusion matrix must be square and non-empty, got shape {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def class_count(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray
    positive_class: int = 1

    @property
    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def confusion_matrix(labels, preds, class_count=None):
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if labels.shape != preds.shape:
        raise ValueError("labels and predictions differ in length")
    if class_count is None:
        class_count = int(max(labels.max(initial=0), preds.max(initial=0))) + 1
    if labels.size and (labels.min() < 0 or preds.min() < 0
                        or labels.max() >= class_count or preds.max() >= class_count):
        raise ValueError(f"labels must lie in [0, {class_count})")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return ConfusionMatrix(cm)


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros_like(a)
    np.divide(a, b, out=out, where=b != 0)
    return out


def per_class_scores(cm):
    """Per-class (precision, recall, f1); every 0/0 is taken as 0."""
    c = cm.counts if isinstance(cm, ConfusionMatrix) else ConfusionMatrix(cm).counts
    tp = np.diag(c).astype(np.float64)
    precision = _safe_div(tp, c.sum(axis=0))
    recall = _safe_div(tp, c.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def macro_scores(cm):
    """Unweighted class means, returned as ``(f1, precision, recall)``."""
    p, r, f1 = per_class_scores(cm)
    return float(f1.mean()), float(p.mean()), float(r.mean())


def pr_curve(scores, labels, positive_class=1):
    """Precision and recall at every distinct score, thresholds descending.

    A sample is predicted positive when its score is >= the threshold.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = np.asarray(labels).ravel() == positive_class
    if scores.shape != pos.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("pr_curve needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], pos[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of tied scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp, fp = tp[last], fp[last]
    recall = tp / n_pos
    precision = _safe_div(tp, tp + fp)
    return PRCurve(recall, precision, s[last], positive_class)


def partial_auc(curve, recall_min=0.5):
    """Trapezoidal area under precision over recall in ``[recall_min, 1]``.

    Points are joined in sweep order. The polyline is cut at ``recall_min`` by
    linear interpolation; if the sweep starts above ``recall_min`` the first
    precision is held constant back to it.
    """
    r = np.asarray(curve.recall, dtype=np.float64)
    p = np.asarray(curve.precision, dtype=np.float64)
    if not 0 <= recall_min <= 1:
        raise ValueError("recall_min must lie in [0, 1]")
    if r.size == 0 or r[-1] < recall_min:
        raise ValueError(f"curve does not reach recall {recall_min}")
    if r[0] >= recall_min:
        r = np.r_[recall_min, r]
        p = np.r_[p[0], p]
    else:
        k = int(np.flatnonzero(r >= recall_min)[0])
        r0, r1, p0, p1 = r[k - 1], r[k], p[k - 1], p[k]
        pb = p1 if r1 == r0 else p0 + (p1 - p0) * (recall_min - r0) / (r1 - r0)
        r = np.r_[recall_min, r[k:]]
        p = np.r_[pb, p[k:]]
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2))


def metrics_csv(cm, class_names=None):
    """Per-class rows plus a ``macro`` row: ``class,precision,recall,f1,support``."""
    p, r, f1 = per_class_scores(cm)
    support = cm.counts.sum(axis=1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "precision", "recall", "f1", "support"])
    for i in range(cm.class_count):
        name = class_names[i] if class_names else i
        w.writerow([name, repr(float(p[i])), repr(float(r[i])), repr(float(f1[i])), int(support[i])])
    mf1, mp, mr = macro_scores(cm)
    w.writerow(["macro", repr(mp), repr(mr), repr(mf1), int(support.sum())])
    return buf.getvalue()


def pr_curve_csv(curve):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["recall", "precision"])
    for r, p in curve.points:
        w.writerow([repr(r), repr(p)])
    return buf.getvalue()
