"""
services/evaluation/metrics.py
ROC AUC as the normalised Mann-Whitney U statistic, computed from average ranks so tied
scores earn half credit.
"""

import numpy as np
from scipy.stats import rankdata

from shared.exceptions import DimensionMismatchError, UndefinedAucError


def auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionMismatchError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if np.isnan(scores).any():
        raise UndefinedAucError("AUC is undefined for NaN scores")
    if not np.isin(labels, (0, 1)).all():
        raise UndefinedAucError("labels must be 0 or 1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError(f"AUC needs both classes; got {n_pos} positive and {n_neg} negative")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
