"""Nested cross-validation: outer folds estimate generalization, inner
folds pick hyperparameters from a grid using only outer-training events.

The harness is model-agnostic: a trainer adapter turns (dataset, training
event indices, grid point, seed) into a scoring function. Grid points and
inner folds are independent work units and may run on a thread pool; all
seeds are derived up front and results are reduced in a fixed order, so the
outcome does not depend on scheduling.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

from .bpr import TrainConfig, train
from .config import derive_seed
from .dataset import InteractionDataset, split_events
from .features import SparseVector
from .fm import make_recommender
from .metrics import DEFAULT_KS, MetricsReport, evaluate_fold, with_fold

logger = logging.getLogger(__name__)

SELECTION_METRICS = ("precision", "recall", "ndcg")

Trainer = Callable[
    [InteractionDataset, Sequence[int], Mapping[str, Any], int],
    tuple[Callable[[SparseVector], np.ndarray], Mapping[str, Any]],
]


@dataclass(frozen=True)
class HyperGrid:
    """Candidate values for the five tuned training hyperparameters."""

    latent_dims: tuple[int, ...] = (4, 8, 16)
    iteration_counts: tuple[int, ...] = (50, 200)
    learning_rates: tuple[float, ...] = (0.01, 0.05)
    lambda_regs: tuple[float, ...] = (0.0, 0.01, 0.1)
    negative_counts: tuple[int, ...] = (1, 5)

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if not tuple(getattr(self, name)):
                raise ValueError(f"grid list {name} must be nonempty")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "HyperGrid":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown grid options: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in doc.items()})

    def points(self) -> list[dict[str, Any]]:
        """All grid points in deterministic (product) iteration order."""
        return [
            {
                "latent_dim": d,
                "n_iterations": it,
                "learning_rate": lr,
                "lambda_reg": lam,
                "negatives_per_positive": l,
            }
            for d, it, lr, lam, l in itertools.product(
                self.latent_dims,
                self.iteration_counts,
                self.learning_rates,
                self.lambda_regs,
                self.negative_counts,
            )
        ]


DEFAULT_GRID = HyperGrid()


@dataclass(frozen=True)
class FoldOutcome:
    fold: int
    chosen: dict[str, Any]
    reports: tuple[MetricsReport, ...]
    probe_loss: tuple[float, ...] | None
    test_only_suppliers: int

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "chosen": self.chosen,
            "reports": [r.to_dict() for r in self.reports],
            "probe_loss": list(self.probe_loss) if self.probe_loss is not None else None,
            "test_only_suppliers": self.test_only_suppliers,
        }


@dataclass(frozen=True)
class CVResult:
    per_fold: tuple[FoldOutcome, ...]
    aggregate: tuple[MetricsReport, ...]

    def to_dict(self) -> dict:
        return {
            "per_fold": [f.to_dict() for f in self.per_fold],
            "aggregate": [r.to_dict() for r in self.aggregate],
        }


def fm_trainer(
    dataset: InteractionDataset,
    train_indices: Sequence[int],
    point: Mapping[str, Any],
    seed: int,
):
    """Harness adapter around the BPR trainer."""
    config = TrainConfig(seed=seed, **dict(point))
    result = train(dataset.subset(train_indices), config)
    recommender = make_recommender(result.params, dataset.schema)
    return recommender, {"probe_loss": result.probe_loss.tolist()}


def _as_points(grid) -> list[dict[str, Any]]:
    if grid is None:
        return [{}]
    if isinstance(grid, HyperGrid):
        return grid.points()
    points = [dict(p) for p in grid]
    if not points:
        raise ValueError("grid must contain at least one point")
    return points


def _selection_value(report: MetricsReport, metric: str) -> float:
    return getattr(report, f"mean_{metric}")


def _inner_score(dataset, train_idx, val_idx, point, seed, trainer, metric, k):
    try:
        recommender, _ = trainer(dataset, train_idx, point, seed)
    except Exception:
        logger.exception("grid point %r failed to train; disqualified", point)
        return -np.inf
    report = evaluate_fold(recommender, val_idx, dataset, ks=[k])[0]
    return _selection_value(report, metric)


def run_nested_cv(
    dataset: InteractionDataset,
    grid: HyperGrid | Sequence[Mapping[str, Any]] | None,
    *,
    n_outer: int = 8,
    n_inner: int = 5,
    selection_metric: str = "ndcg",
    selection_k: int = 10,
    ks: Sequence[int] = DEFAULT_KS,
    seed: int = 0,
    trainer: Trainer = fm_trainer,
    trace: list | None = None,
    n_jobs: int = 1,
) -> CVResult:
    """Full nested CV run; returns per-fold and aggregated metric reports.

    For each outer fold, every grid point is trained on each inner-training
    split and scored by ``selection_metric`` at ``selection_k`` on the
    inner-validation fold; the best point (ties: first in grid order) is
    retrained on the whole outer-training set and evaluated on the held-out
    fold. A singleton grid skips the inner loop entirely, which makes the
    run identical to flat k-fold CV of that point. Grid points that fail to
    train are disqualified; if all fail, the run errors.

    When ``trace`` is a list, one membership record per outer fold is
    appended for :func:`leakage_audit`.
    """
    if selection_metric not in SELECTION_METRICS:
        raise ValueError(f"selection_metric must be one of {SELECTION_METRICS}")
    points = _as_points(grid)
    outer_folds = split_events(dataset, n_outer, derive_seed(seed, "outer-split"))
    # materialize shared read-only views before any parallel work
    dataset.event_feature_csr
    dataset.negative_pools

    all_events = np.arange(dataset.n_events)
    fold_outcomes = []
    per_k_means = {k: [] for k in ks}

    for fold_idx, test_fold in enumerate(outer_folds):
        train_idx = np.setdiff1d(all_events, test_fold)
        inner_perm = np.random.default_rng(
            derive_seed(seed, "inner-split", fold_idx)
        ).permutation(train_idx.size)
        inner_folds = [
            np.sort(train_idx[chunk])
            for chunk in np.array_split(inner_perm, n_inner)
        ]

        trace_record = None
        if trace is not None:
            trace_record = {
                "fold": fold_idx,
                "n_events": dataset.n_events,
                "test": [int(i) for i in test_fold],
                "train": [int(i) for i in train_idx],
                "inner": [],
            }

        if len(points) == 1:
            chosen_idx = 0
        else:
            tasks = []
            for p_idx in range(len(points)):
                for j, val_fold in enumerate(inner_folds):
                    inner_train = np.setdiff1d(train_idx, val_fold)
                    tasks.append((p_idx, j, inner_train, val_fold))
            scores = Parallel(n_jobs=n_jobs, prefer="threads")(
                delayed(_inner_score)(
                    dataset,
                    inner_train,
                    val_fold,
                    points[p_idx],
                    derive_seed(seed, "inner-train", fold_idx, p_idx, j),
                    trainer,
                    selection_metric,
                    selection_k,
                )
                for p_idx, j, inner_train, val_fold in tasks
            )
            sums = np.zeros(len(points))
            failed = np.zeros(len(points), dtype=bool)
            for (p_idx, _, _, _), s in zip(tasks, scores):
                if np.isneginf(s):
                    failed[p_idx] = True
                else:
                    sums[p_idx] += s
            means = np.where(failed, -np.inf, sums / n_inner)
            if np.all(np.isneginf(means)):
                raise RuntimeError("every grid point failed to train")
            chosen_idx = int(np.argmax(means))

        if trace_record is not None:
            for j, val_fold in enumerate(inner_folds):
                inner_train = np.setdiff1d(train_idx, val_fold)
                trace_record["inner"].append(
                    {
                        "fold": j,
                        "train": [int(i) for i in inner_train],
                        "val": [int(i) for i in val_fold],
                    }
                )
            trace.append(trace_record)

        recommender, info = trainer(
            dataset,
            train_idx,
            points[chosen_idx],
            derive_seed(seed, "final-train", fold_idx),
        )
        reports = with_fold(
            evaluate_fold(recommender, test_fold, dataset, ks=ks), fold_idx
        )

        train_counts = dataset.subset(train_idx).participation_counts()
        test_suppliers = set().union(
            *(dataset.events[int(i)].participants for i in test_fold)
        ) if test_fold.size else set()
        test_only = sum(1 for s in test_suppliers if train_counts[s] == 0)

        probe = info.get("probe_loss")
        fold_outcomes.append(
            FoldOutcome(
                fold=fold_idx,
                chosen=dict(points[chosen_idx]),
                reports=reports,
                probe_loss=tuple(probe) if probe is not None else None,
                test_only_suppliers=test_only,
            )
        )
        for k, report in zip(ks, reports):
            per_k_means[k].append(report)

    aggregate = []
    for k in ks:
        reports = per_k_means[k]
        aggregate.append(
            MetricsReport(
                k=int(k),
                mean_precision=float(np.mean([r.mean_precision for r in reports])),
                mean_recall=float(np.mean([r.mean_recall for r in reports])),
                mean_ndcg=float(np.mean([r.mean_ndcg for r in reports])),
                n_events_evaluated=int(sum(r.n_events_evaluated for r in reports)),
                n_events_excluded=int(sum(r.n_events_excluded for r in reports)),
            )
        )
    return CVResult(per_fold=tuple(fold_outcomes), aggregate=tuple(aggregate))


def run_flat_cv(
    dataset: InteractionDataset,
    point: Mapping[str, Any],
    *,
    n_folds: int = 8,
    ks: Sequence[int] = DEFAULT_KS,
    seed: int = 0,
    trainer: Trainer = fm_trainer,
) -> CVResult:
    """Plain k-fold CV of one configuration (no hyperparameter tuning).

    Uses the same fold split and training seeds as nested CV, so a nested
    run over a singleton grid reproduces this result exactly.
    """
    return run_nested_cv(
        dataset,
        [point],
        n_outer=n_folds,
        ks=ks,
        seed=seed,
        trainer=trainer,
    )


@dataclass(frozen=True)
class AuditReport:
    n_folds: int
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "n_folds": self.n_folds,
            "ok": self.ok,
            "violations": list(self.violations),
        }


def leakage_audit(trace_records: Sequence[Mapping]) -> AuditReport:
    """Check fold-membership records for train/test contamination.

    Verifies that no outer-test event appears in its fold's training set or
    in any inner split, that inner folds partition the outer-training set,
    and that the outer folds partition all events (each event held out
    exactly once).
    """
    violations: list[str] = []
    test_seen: dict[int, int] = {}
    n_events = None
    for rec in trace_records:
        fold = rec["fold"]
        test = set(rec["test"])
        train = set(rec["train"])
        n_events = rec.get("n_events", n_events)
        for e in sorted(test & train):
            violations.append(f"fold {fold}: event {e} in both test and train")
        for e in sorted(test):
            if e in test_seen:
                violations.append(
                    f"fold {fold}: event {e} already held out by fold {test_seen[e]}"
                )
            else:
                test_seen[e] = fold
        inner_union: set[int] = set()
        for inner in rec.get("inner", ()):
            j = inner["fold"]
            itrain = set(inner["train"])
            ival = set(inner["val"])
            for e in sorted(test & itrain):
                violations.append(
                    f"fold {fold}: test event {e} in inner train {j}"
                )
            for e in sorted(test & ival):
                violations.append(
                    f"fold {fold}: test event {e} in inner validation {j}"
                )
            for e in sorted(itrain & ival):
                violations.append(
                    f"fold {fold}: event {e} in both halves of inner split {j}"
                )
            for e in sorted((itrain | ival) - train):
                violations.append(
                    f"fold {fold}: inner split {j} uses non-training event {e}"
                )
            if inner_union & ival:
                violations.append(
                    f"fold {fold}: inner validation folds overlap at split {j}"
                )
            inner_union |= ival
        if rec.get("inner") and inner_union != train:
            violations.append(
                f"fold {fold}: inner validation folds do not cover the training set"
            )
    if n_events is not None and len(test_seen) != n_events:
        missing = sorted(set(range(n_events)) - set(test_seen))
        violations.append(f"events never held out: {missing}")
    return AuditReport(
        n_folds=len(list(trace_records)), violations=tuple(violations)
    )
