"""Ranking metrics for outlier detection: AUC, AP and Recall@k.

Tie handling:

* AUC counts a tied (positive, negative) pair as one half.
* AP groups tied scores into one threshold, so a block of equal scores enters
  the precision/recall sweep at once and input order does not matter.
* Recall@k ranks by descending score and breaks ties by lowest input index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class UndefinedMetric(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    auc: float | None
    ap: float | None
    recall_at_k: float | None
    k: int
    n_scored: int
    scores: np.ndarray | None = None
    labels: np.ndarray | None = None

    def row(self) -> dict[str, float | None]:
        return {"auc": self.auc, "ap": self.ap, "recall_at_k": self.recall_at_k}


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of ROC AUC, ties counted as one half."""
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes")
    from scipy.stats import rankdata  # deferred: scipy.stats is slow to import

    ranks = rankdata(s)  # midranks
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetric("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(y[order])
    # last index of each tie group is where a threshold lands
    ends = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s.size - 1]
    tp_at = tp[ends].astype(np.float64)
    precision = tp_at / (ends + 1)
    recall = tp_at / n_pos
    gains = np.diff(np.r_[0.0, recall])
    return float((gains * precision).sum())


def recall_at_k(scores, labels) -> float:
    s, y = _prepare(scores, labels)
    k = int(y.sum())
    if k == 0:
        raise UndefinedMetric("Recall@k needs at least one positive")
    top = np.argsort(-s, kind="stable")[:k]
    return float(y[top].sum() / k)


def evaluate_scores(scores, labels) -> EvalReport:
    s, y = _prepare(scores, labels)
    try:
        a = auc(s, y)
    except UndefinedMetric:
        log.warning("AUC undefined: scored set has a single class")
        a = None
    if y.sum() == 0:
        log.warning("AP and Recall@k undefined: no positives in scored set")
        ap = rec = None
    else:
        ap, rec = average_precision(s, y), recall_at_k(s, y)
    return EvalReport(
        auc=a,
        ap=ap,
        recall_at_k=rec,
        k=int(y.sum()),
        n_scored=int(s.size),
        scores=s,
        labels=y,
    )
