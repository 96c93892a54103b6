from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricsReport:
    accuracy: float
    fpr: float
    f1: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int
    evasion_rate: float | None = None
    detection_latency_median: float | None = None


def rank_auc(y_true, scores) -> float:
    """Mann-Whitney AUC with midranks for ties; 0.5 when one class is absent."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def classification_metrics(y_true, y_pred, scores) -> MetricsReport:
    """Malware is the positive class."""
    y = np.asarray(y_true).astype(int)
    p = np.asarray(y_pred).astype(int)
    tp = int(((y == 1) & (p == 1)).sum())
    fp = int(((y == 0) & (p == 1)).sum())
    tn = int(((y == 0) & (p == 0)).sum())
    fn = int(((y == 1) & (p == 0)).sum())
    total = tp + fp + tn + fn
    fpr = fp / (fp + tn) if fp + tn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return MetricsReport((tp + tn) / total if total else 0.0, fpr, f1, rank_auc(y, scores), tp, fp, tn, fn)
