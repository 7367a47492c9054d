"""Confusion statistics, ROC and AUC over field-of-view pixels.

Vessel is the positive class. Ratios whose denominator is zero are reported
as ``None`` rather than NaN.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def confusion(pred, truth, fov=None) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape or (fov is not None and np.shape(fov) != truth.shape):
        raise ShapeError(f"shape mismatch: pred {pred.shape}, truth {truth.shape}, "
                         f"fov {None if fov is None else np.shape(fov)}")
    if fov is not None:
        keep = np.asarray(fov).astype(bool)
        pred, truth = pred[keep], truth[keep]
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num, den):
    return num / den if den else None


def summary_stats(c: ConfusionCounts) -> dict:
    return {
        "precision": _ratio(c.tp, c.tp + c.fp),
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "accuracy": _ratio(c.tp + c.tn, c.total),
    }


def roc_curve(scores, labels):
    """ROC over every distinct score threshold, highest first.

    Returns ``(thresholds, fpr, tpr)``; the first point is ``(0, 0)`` at
    threshold ``+inf`` and the last is ``(1, 1)``. Tied scores move both rates
    in one diagonal step, which gives ties half credit in the area.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores but {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs at least one positive and one negative label")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    lab = labels[order]
    last = np.flatnonzero(np.diff(s) != 0)
    last = np.append(last, s.size - 1)
    tps = np.cumsum(lab, dtype=np.int64)[last]
    fps = (last + 1) - tps
    thresholds = np.concatenate([[np.inf], s[last]])
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    return thresholds, fpr, tpr


def auc(scores, labels) -> float:
    _, fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)


@dataclass
class MetricsReport:
    name: str
    counts: ConfusionCounts
    threshold: float
    precision: float | None
    sensitivity: float | None
    specificity: float | None
    accuracy: float | None
    auc: float | None
    roc: tuple | None = field(default=None, repr=False)  # (thresholds, fpr, tpr)

    @property
    def pixels(self):
        return self.counts.total


def report(name, prob, truth, fov, threshold=0.5, keep_roc=False) -> MetricsReport:
    """Thresholded statistics and AUC for one probability map, inside ``fov``."""
    keep = np.asarray(fov).astype(bool)
    scores = np.asarray(prob)[keep]
    labels = np.asarray(truth)[keep].astype(bool)
    return report_from_pixels(name, scores, labels, threshold, keep_roc)


def report_from_pixels(name, scores, labels, threshold=0.5, keep_roc=False) -> MetricsReport:
    c = confusion(scores >= threshold, labels)
    try:
        roc = roc_curve(scores, labels)
        area = float(np.sum(np.diff(roc[1]) * (roc[2][1:] + roc[2][:-1])) / 2.0)
    except UndefinedMetricError:
        roc, area = None, None
    return MetricsReport(name, c, threshold, auc=area, roc=roc if keep_roc else None, **summary_stats(c))


def mean_report(name, reports) -> MetricsReport:
    """Average each ratio over images (skipping undefined ones); counts are summed."""
    counts = sum((r.counts for r in reports[1:]), reports[0].counts)

    def avg(attr):
        vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else None

    return MetricsReport(name, counts, reports[0].threshold, precision=avg("precision"),
                         sensitivity=avg("sensitivity"), specificity=avg("specificity"),
                         accuracy=avg("accuracy"), auc=avg("auc"))


CSV_FIELDS = ("image", "pixels", "tp", "fp", "tn", "fn", "precision", "sensitivity",
              "specificity", "accuracy", "auc", "threshold")


def _fmt(v):
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_metrics_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in reports:
            c = r.counts
            w.writerow([r.name, r.pixels, c.tp, c.fp, c.tn, c.fn] + [
                _fmt(v) for v in (r.precision, r.sensitivity, r.specificity, r.accuracy, r.auc, r.threshold)])


def thin_roc(roc, max_points: int | None):
    """Keep at most ``max_points`` evenly spaced ROC points, always including both ends."""
    thresholds, fpr, tpr = roc
    if not max_points or len(fpr) <= max_points:
        return roc
    idx = np.unique(np.linspace(0, len(fpr) - 1, max(2, max_points)).round().astype(np.int64))
    return thresholds[idx], fpr[idx], tpr[idx]


def write_roc_csv(path, roc, max_points: int | None = None):
    thresholds, fpr, tpr = thin_roc(roc, max_points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("threshold", "fpr", "tpr"))
        for t, f, p in zip(thresholds, fpr, tpr):
            w.writerow(("inf" if np.isinf(t) else repr(float(t)), repr(float(f)), repr(float(p))))
