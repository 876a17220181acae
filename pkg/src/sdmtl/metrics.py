"""Evaluation metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels) -> float:
    """Rank-sum AUC; tied scores share their average rank (0.5 credit per tied pair)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined with a single class")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def violation_rate(f) -> float:
    """Fraction of (sample, adjacent task pair) entries where f_i > f_{i-1}."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] < 2:
        raise ValueError("violation_rate needs a B x N matrix with N >= 2")
    return float((f[:, 1:] > f[:, :-1]).mean())


def log_loss(f, labels) -> float:
    f = np.clip(np.asarray(f, dtype=np.float64), 1e-12, 1 - 1e-12)
    y = np.asarray(labels, dtype=np.float64)
    return float(-(y * np.log(f) + (1 - y) * np.log1p(-f)).mean())
