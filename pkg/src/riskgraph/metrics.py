"""Threshold, ranking and calibration metrics for binary risk scores."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UndefinedMetric


def _inputs(p, y):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1).astype(np.int64)
    if len(p) != len(y):
        raise ShapeError(f"{len(p)} scores but {len(y)} labels")
    return p, y


def threshold_metrics(p, y, threshold=0.5):
    """Accuracy, precision, recall and F1 when predicting positive iff ``p >= threshold``.

    Degenerate ratios (no predicted positives, no actual positives) are 0.
    """
    p, y = _inputs(p, y)
    if len(p) == 0:
        raise ShapeError("threshold metrics need at least one example")
    pred = p >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    accuracy = (tp + tn) / len(p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, precision, recall, f1


def _average_ranks(values):
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    ranks = np.empty(len(values))
    # group boundaries of equal values
    starts = np.flatnonzero(np.r_[True, sorted_v[1:] != sorted_v[:-1]])
    ends = np.r_[starts[1:], len(values)]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auroc(p, y):
    """Probability a random positive outscores a random negative, ties counting one half."""
    p, y = _inputs(p, y)
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs both classes")
    ranks = _average_ranks(p)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(p, y):
    """Average precision over descending-score prefixes; tied scores enter as one group."""
    p, y = _inputs(p, y)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise UndefinedMetric("AUPRC needs at least one positive")
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], y[order]
    tp = np.cumsum(ys)
    # last index of each tie group
    last = np.flatnonzero(np.r_[ps[1:] != ps[:-1], True])
    tp_g = tp[last]
    precision = tp_g / (last + 1.0)
    recall = tp_g / n_pos
    gains = np.diff(np.r_[0.0, recall])
    return float(np.sum(gains * precision))


def ece(p, y, n_bins=15):
    """Positive-class expected calibration error over equal-width bins.

    Returns ``(ece, table)`` where ``table`` lists ``(count, mean_p, pos_rate)``
    per bin; empty bins report ``(0, None, None)``.
    """
    p, y = _inputs(p, y)
    if len(p) == 0:
        raise ShapeError("ECE needs at least one example")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    idx = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    idx = np.maximum(idx, 0)
    total = 0.0
    table = []
    for b in range(n_bins):
        sel = idx == b
        count = int(sel.sum())
        if count == 0:
            table.append((0, None, None))
            continue
        mean_p = float(p[sel].mean())
        rate = float(y[sel].mean())
        total += count / len(p) * abs(mean_p - rate)
        table.append((count, mean_p, rate))
    return float(total), table


def brier(p, y):
    p, y = _inputs(p, y)
    if len(p) == 0:
        raise ShapeError("Brier score needs at least one example")
    return float(np.mean((p - y) ** 2))


@dataclass
class MetricsReport:
    split: str
    n: int
    threshold: float
    n_bins: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auroc: float = None
    auprc: float = None
    ece: float = None
    brier: float = None
    reliability: list = field(default_factory=list)

    KEYS = ("split", "n", "threshold", "n_bins", "accuracy", "precision", "recall", "f1",
            "auroc", "auprc", "ece", "brier", "reliability")

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.KEYS}
        out["reliability"] = [{"bin": i, "count": c, "mean_p": m, "pos_rate": r}
                              for i, (c, m, r) in enumerate(self.reliability)]
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["reliability"] = [(r["count"], r["mean_p"], r["pos_rate"])
                               for r in data["reliability"]]
        return cls(**data)


def evaluate(p, y, split="test", threshold=0.5, n_bins=15):
    """Full report; metrics undefined for the labels present are left as ``None``."""
    p, y = _inputs(p, y)
    acc, prec, rec, f1 = threshold_metrics(p, y, threshold)
    report = MetricsReport(split=split, n=len(p), threshold=threshold, n_bins=n_bins,
                           accuracy=acc, precision=prec, recall=rec, f1=f1)
    try:
        report.auroc = auroc(p, y)
    except UndefinedMetric:
        pass
    try:
        report.auprc = auprc(p, y)
    except UndefinedMetric:
        pass
    report.ece, report.reliability = ece(p, y, n_bins)
    report.brier = brier(p, y)
    return report
