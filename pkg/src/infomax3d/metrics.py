"""Evaluation metrics: MAE, RMSE, and ROC-AUC via the rank statistic."""

from __future__ import annotations

import numpy as np

METRIC_KINDS = ("mae", "rmse", "roc_auc")


def mae(preds, labels) -> float:
    preds, labels = _as_pair(preds, labels)
    return float(np.abs(preds - labels).mean())


def rmse(preds, labels) -> float:
    preds, labels = _as_pair(preds, labels)
    return float(np.sqrt(((preds - labels) ** 2).mean()))


def _as_pair(preds, labels):
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ValueError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    if preds.size == 0:
        raise ValueError("empty prediction array")
    return preds, labels


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their run."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve (Mann-Whitney with midrank ties).

    Labels must be binary with both classes present.
    """
    scores, labels = _as_pair(scores, labels)
    classes = np.unique(labels)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError(f"roc_auc requires binary 0/1 labels, got values {classes}")
    n_pos = int((labels == 1.0).sum())
    n_neg = int((labels == 0.0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires both classes present")
    ranks = _midranks(scores)
    return float((ranks[labels == 1.0].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def metric(kind: str, preds, labels) -> float:
    if kind == "mae":
        return mae(preds, labels)
    if kind == "rmse":
        return rmse(preds, labels)
    if kind == "roc_auc":
        return roc_auc(preds, labels)
    raise ValueError(f"unknown metric kind {kind!r}; known: {METRIC_KINDS}")
