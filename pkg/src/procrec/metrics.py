"""Top-k ranking metrics: precision, recall, NDCG over per-event rankings.

All three treat relevance as unary: a recommended supplier is a hit iff it
belongs to the event's participant set. NDCG normalizes by the ideal DCG,
which places hits at the first ``min(k, |ground_truth|)`` positions.
"""

from __future__ import annotations

import math
from collections.abc import Collection, Sequence
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .dataset import InteractionDataset
from .features import SparseVector

Recommender = Callable[[SparseVector], np.ndarray]

DEFAULT_KS = (1, 3, 5, 10, 20)


@dataclass(frozen=True)
class RankedList:
    """Ordered top-k recommendation for one event (no duplicates)."""

    event_id: str
    ranked_suppliers: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.ranked_suppliers)) != len(self.ranked_suppliers):
            raise ValueError("ranked list contains duplicate suppliers")
        if not self.ranked_suppliers:
            raise ValueError("ranked list must contain at least one supplier")

    @property
    def k(self) -> int:
        return len(self.ranked_suppliers)


@dataclass(frozen=True)
class MetricsReport:
    """Mean metrics at one cutoff over the evaluated events of a fold."""

    k: int
    mean_precision: float
    mean_recall: float
    mean_ndcg: float
    n_events_evaluated: int
    n_events_excluded: int = 0
    fold: int | None = None

    def __post_init__(self) -> None:
        for name in ("mean_precision", "mean_recall", "mean_ndcg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "precision": self.mean_precision,
            "recall": self.mean_recall,
            "ndcg": self.mean_ndcg,
            "n_events": self.n_events_evaluated,
            "n_excluded": self.n_events_excluded,
            "fold": self.fold,
        }


def precision_at_k(topk: RankedList, ground_truth: Collection[int]) -> float:
    """Fraction of the recommended list that is relevant."""
    gt = set(ground_truth)
    hits = sum(1 for s in topk.ranked_suppliers if s in gt)
    return hits / topk.k


def recall_at_k(topk: RankedList, ground_truth: Collection[int]) -> float:
    """Fraction of the relevant suppliers that were recommended."""
    gt = set(ground_truth)
    if not gt:
        raise ValueError("recall is undefined for an empty ground truth")
    hits = sum(1 for s in topk.ranked_suppliers if s in gt)
    return hits / len(gt)


def ndcg_at_k(topk: RankedList, ground_truth: Collection[int]) -> float:
    """Rank-discounted hit quality, normalized to [0, 1] by the ideal DCG."""
    gt = set(ground_truth)
    if not gt:
        raise ValueError("NDCG is undefined for an empty ground truth")
    dcg = sum(
        1.0 / math.log2(i + 2)
        for i, s in enumerate(topk.ranked_suppliers)
        if s in gt
    )
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(topk.k, len(gt))))
    return dcg / idcg


def rank_suppliers(scores: np.ndarray) -> np.ndarray:
    """Full supplier ranking: descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def evaluate_fold(
    recommender: Recommender,
    test_events: Sequence[int],
    dataset: InteractionDataset,
    ks: Sequence[int] = DEFAULT_KS,
) -> list[MetricsReport]:
    """Mean precision/recall/NDCG at each cutoff over a held-out event fold.

    Every supplier is a candidate for every event. Events with an empty
    participant set are excluded from the means and tallied in the report.
    Non-finite recommender scores are an error.
    """
    if not ks or any(k < 1 for k in ks):
        raise ValueError("cutoffs must be positive")
    kmax = max(ks)
    sums = {k: np.zeros(3) for k in ks}
    evaluated = 0
    excluded = 0
    for idx in test_events:
        ev = dataset.events[int(idx)]
        if not ev.participants:
            excluded += 1
            continue
        scores = np.asarray(recommender(ev.features), dtype=np.float64)
        if scores.shape != (dataset.n_suppliers,):
            raise ValueError(
                f"recommender returned {scores.shape}, expected ({dataset.n_suppliers},)"
            )
        if not np.all(np.isfinite(scores)):
            raise ValueError(f"recommender returned non-finite scores for {ev.event_id}")
        order = rank_suppliers(scores)[:kmax]
        gt = ev.participants
        hit = [s in gt for s in order]
        for k in ks:
            hits = sum(hit[:k])
            dcg = sum(1.0 / math.log2(i + 2) for i in range(k) if i < len(hit) and hit[i])
            idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(gt))))
            sums[k] += (hits / k, hits / len(gt), dcg / idcg)
        evaluated += 1
    reports = []
    for k in ks:
        p, r, n = (sums[k] / evaluated) if evaluated else (0.0, 0.0, 0.0)
        reports.append(
            MetricsReport(
                k=int(k),
                mean_precision=float(p),
                mean_recall=float(r),
                mean_ndcg=float(n),
                n_events_evaluated=evaluated,
                n_events_excluded=excluded,
            )
        )
    return reports


def with_fold(reports: Sequence[MetricsReport], fold: int) -> tuple[MetricsReport, ...]:
    return tuple(replace(r, fold=fold) for r in reports)
