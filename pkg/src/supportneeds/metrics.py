"""Micro-averaged evaluation metrics and cross-validation aggregation.

Micro-averaging pools true/false positive/negative counts across all
classes before computing ratios, so every (sample, class) decision weighs
equally.  AUC is computed on the pooled (sample, class) set via the rank
statistic with tie averaging, which equals trapezoidal integration of the
ROC curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, MetricUndefinedError


@dataclass
class ConfusionCounts:
    """Per-class binary counts; index order follows the class list."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.tp)


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionCounts:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataFormatError(
            f"batch shape mismatch: {y_true.shape} vs {y_pred.shape}"
        )
    tp = ((y_true == 1) & (y_pred == 1)).sum(axis=0)
    fp = ((y_true == 0) & (y_pred == 1)).sum(axis=0)
    fn = ((y_true == 1) & (y_pred == 0)).sum(axis=0)
    tn = ((y_true == 0) & (y_pred == 0)).sum(axis=0)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass
class MicroPRF:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # some denominator was zero; affected metrics are 0


def micro_prf(counts: ConfusionCounts) -> MicroPRF:
    tp = int(counts.tp.sum())
    fp = int(counts.fp.sum())
    fn = int(counts.fn.sum())
    degenerate = False
    if tp + fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0.0:
        f1 = 0.0
        degenerate = degenerate or tp + fp == 0 or tp + fn == 0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MicroPRF(precision=precision, recall=recall, f1=f1, degenerate=degenerate)


def per_class_recall(counts: ConfusionCounts) -> list[float]:
    out = []
    for c in range(counts.n_classes):
        denom = counts.tp[c] + counts.fn[c]
        out.append(float(counts.tp[c] / denom) if denom > 0 else 0.0)
    return out


def _rank_auc(truth: np.ndarray, scores: np.ndarray) -> float:
    """AUC via average ranks (Mann-Whitney); ties share their mean rank."""
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            "AUC undefined: pooled truth contains a single class"
        )
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(ranks[truth == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def micro_auc(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Pool every (sample, class) pair into one binary scored set."""
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.shape != scores.shape:
        raise DataFormatError(
            f"batch shape mismatch: {y_true.shape} vs {scores.shape}"
        )
    if not np.isfinite(scores).all():
        raise DataFormatError("scores must be finite")
    return _rank_auc(y_true.ravel(), scores.ravel())


def class_auc(y_true: np.ndarray, scores: np.ndarray, class_index: int) -> float:
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    return _rank_auc(y_true[:, class_index], scores[:, class_index])


def roc_points(truth: np.ndarray, scores: np.ndarray) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) triples for external plotting, high to low."""
    truth = np.asarray(truth, dtype=np.int64).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("ROC undefined: single-class truth")
    order = np.argsort(-scores, kind="stable")
    points = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < len(order):
        threshold = scores[order[i]]
        while i < len(order) and scores[order[i]] == threshold:
            if truth[order[i]] == 1:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos, float(threshold)))
    return points


@dataclass
class MetricsReport:
    """Evaluation summary; ``folds`` is filled by cross-validation."""

    micro_precision: float
    micro_recall: float
    micro_f1: float
    micro_auc: float | None
    per_class_auc: dict[str, float | None]
    per_class_recall: dict[str, float]
    n_samples: int
    n_classes: int
    degenerate: bool = False
    folds: list[dict] = field(default_factory=list)
    fold_mean: dict[str, float] = field(default_factory=dict)
    fold_std: dict[str, float] = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "micro_f1": self.micro_f1,
            "micro_auc": self.micro_auc,
            "per_class_auc": self.per_class_auc,
            "per_class_recall": self.per_class_recall,
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "degenerate": self.degenerate,
            "folds": self.folds,
            "fold_mean": self.fold_mean,
            "fold_std": self.fold_std,
            "notes": self.notes,
        }


def evaluate_predictions(
    y_true: np.ndarray,
    probs: np.ndarray,
    classes: tuple[str, ...],
    threshold: float = 0.5,
) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    y_pred = (probs >= threshold).astype(np.int64)
    counts = confusion(y_true, y_pred)
    prf = micro_prf(counts)

    try:
        auc: float | None = micro_auc(y_true, probs)
    except MetricUndefinedError:
        auc = None
    per_auc: dict[str, float | None] = {}
    for c, name in enumerate(classes):
        try:
            per_auc[name] = class_auc(y_true, probs, c)
        except MetricUndefinedError:
            per_auc[name] = None
    recalls = per_class_recall(counts)

    return MetricsReport(
        micro_precision=prf.precision,
        micro_recall=prf.recall,
        micro_f1=prf.f1,
        micro_auc=auc,
        per_class_auc=per_auc,
        per_class_recall={name: recalls[c] for c, name in enumerate(classes)},
        n_samples=int(y_true.shape[0]),
        n_classes=len(classes),
        degenerate=prf.degenerate,
    )


_FOLD_METRICS = ("micro_precision", "micro_recall", "micro_f1", "micro_auc")


def aggregate_folds(reports: list[MetricsReport], classes: tuple[str, ...]) -> MetricsReport:
    """Mean and standard deviation across per-fold reports."""
    if not reports:
        raise DataFormatError("no fold reports to aggregate")
    folds = []
    for i, report in enumerate(reports):
        row = {"fold": i}
        for name in _FOLD_METRICS:
            row[name] = getattr(report, name)
        row["n_samples"] = report.n_samples
        folds.append(row)

    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for name in _FOLD_METRICS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if values:
            mean[name] = float(np.mean(values))
            std[name] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    def _mean_or_none(values: list[float | None]) -> float | None:
        present = [v for v in values if v is not None]
        return float(np.mean(present)) if present else None

    per_auc = {
        name: _mean_or_none([r.per_class_auc.get(name) for r in reports])
        for name in classes
    }
    per_recall = {
        name: float(np.mean([r.per_class_recall.get(name, 0.0) for r in reports]))
        for name in classes
    }
    return MetricsReport(
        micro_precision=mean.get("micro_precision", 0.0),
        micro_recall=mean.get("micro_recall", 0.0),
        micro_f1=mean.get("micro_f1", 0.0),
        micro_auc=mean.get("micro_auc"),
        per_class_auc=per_auc,
        per_class_recall=per_recall,
        n_samples=sum(r.n_samples for r in reports),
        n_classes=len(classes),
        degenerate=any(r.degenerate for r in reports),
        folds=folds,
        fold_mean=mean,
        fold_std=std,
    )


def paired_significance(values_a: list[float], values_b: list[float]) -> float:
    """Wilcoxon signed-rank p-value across folds for two configurations."""
    from scipy import stats

    if len(values_a) != len(values_b):
        raise DataFormatError("paired comparison needs equal-length fold lists")
    diffs = np.asarray(values_a) - np.asarray(values_b)
    if np.allclose(diffs, 0.0):
        return 1.0
    return float(stats.wilcoxon(values_a, values_b).pvalue)
