"""Classification metrics with dropout as the positive class."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "roc_auc", "balanced_accuracy")


@dataclass(frozen=True)
class FoldMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float | None  # None when the labels hold a single class
    balanced_accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_test: int

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def roc_auc(scores, labels) -> float | None:
    """Mann-Whitney AUC from average ranks: (concordant + ties/2) / (n+ n-)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_score(pred, labels) -> float:
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & labels))
    return _ratio(2 * tp, int(pred.sum()) + int(labels.sum()))


def compute_metrics(scores, labels, threshold: float = 0.5) -> FoldMetrics:
    """Metrics for one test fold; a score >= ``threshold`` predicts dropout.

    Precision, recall and F1 are 0 when their denominator is empty. TPR or TNR
    of an absent class count as 0 in balanced accuracy.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and aligned")
    if scores.size == 0:
        raise ValueError("no test rows")
    if np.any(np.isnan(scores)) or np.any((scores < 0) | (scores > 1)):
        raise ValueError("scores must lie in [0, 1]")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be binary")
    y = labels.astype(bool)
    pred = scores >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    tn = int(np.sum(~pred & ~y))
    fn = int(np.sum(~pred & y))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return FoldMetrics(
        accuracy=(tp + tn) / y.size,
        precision=precision,
        recall=recall,
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        roc_auc=roc_auc(scores, y),
        balanced_accuracy=(recall + _ratio(tn, tn + fp)) / 2.0,
        tp=tp, fp=fp, tn=tn, fn=fn, n_test=int(y.size),
    )
