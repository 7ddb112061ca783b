"""Binary classification metrics and the time-decay area measure.

Positives are malware: tp = correctly classified malware, fp = benignware
classified as malware. The time-decay value averages a metric series over
consecutive slots by the trapezoid rule.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class MetricsError(Exception):
    pass


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5
    periods: list[str] | None = None
    series: dict[str, list[float]] | None = None
    aut: dict[str, float] | None = None
    notes: list[str] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        obj = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "threshold": self.threshold,
        }
        if self.periods is not None:
            obj["periods"] = self.periods
            obj["series"] = self.series
            obj["aut"] = self.aut
        if self.notes:
            obj["notes"] = self.notes
        return obj


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float | None:
    """Rank-statistic AUC with midranks for ties; None on a single-class set."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def binary_metrics(labels, scores, threshold: float = 0.5) -> MetricReport:
    """Threshold the scores and compute the standard report."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise MetricsError("labels and scores must align")
    if len(labels) == 0:
        raise MetricsError("cannot evaluate an empty dataset")
    preds = (scores >= threshold).astype(np.int64)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    notes = []
    accuracy = (tp + tn) / len(labels)
    if tp + fp == 0:
        precision = 0.0
        notes.append("no positive predictions: precision reported as 0")
        warnings.warn("no positive predictions: precision reported as 0")
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    auc = roc_auc(labels, scores)
    if auc is None:
        notes.append("single-class dataset: roc_auc undefined")
    return MetricReport(accuracy=accuracy, precision=precision, recall=recall, f1=f1,
                        roc_auc=auc, tp=tp, fp=fp, tn=tn, fn=fn, threshold=threshold,
                        notes=notes)


def aut(series: list[float]) -> float:
    """Trapezoidal average of a metric over N time slots:
    (1/(N-1)) * sum_k (f(k+1)+f(k))/2 for k = 1..N-1."""
    n = len(series)
    if n < 2:
        raise MetricsError("time-decay area needs at least two slots")
    total = 0.0
    for k in range(n - 1):
        total += (series[k + 1] + series[k]) / 2.0
    return total / (n - 1)


AUT_METRICS = ("accuracy", "precision", "recall", "f1")


def metrics_by_period(labels, scores, periods, threshold: float = 0.5) -> MetricReport:
    """Overall report plus per-period series and their time-decay areas.

    Slots are the distinct periods in ascending order; apps without a
    period are excluded from the series (not from the overall numbers).
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    report = binary_metrics(labels, scores, threshold)
    slot_keys = sorted({p for p in periods if p})
    if len(slot_keys) < 2:
        raise MetricsError(f"need >= 2 periods for the time series, got {len(slot_keys)}")
    series: dict[str, list[float]] = {m: [] for m in AUT_METRICS}
    for key in slot_keys:
        idx = np.array([i for i, p in enumerate(periods) if p == key], dtype=np.int64)
        sub = binary_metrics(labels[idx], scores[idx], threshold)
        for m in AUT_METRICS:
            series[m].append(getattr(sub, m))
    report.periods = slot_keys
    report.series = series
    report.aut = {m: aut(series[m]) for m in AUT_METRICS}
    return report
