"""Comparison recommenders: supplier popularity and the purchaser-only FM.

The popularity model ignores event meta-data entirely. The ablated FM is
not a model of its own: it is the same trainer run on a dataset whose
schema and event vectors are stripped to the supplier and purchaser
identity blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Event, InteractionDataset
from .features import FeatureSchema, SparseVector

POPULARITY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PopularityModel:
    """Per-supplier participation counts over the training events."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ValueError("counts must be a 1-d nonnegative array")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)


def train_popularity(dataset: InteractionDataset) -> PopularityModel:
    """Count how many training events each supplier participated in."""
    if dataset.n_events == 0:
        raise ValueError("cannot train popularity on an empty dataset")
    return PopularityModel(counts=dataset.participation_counts())


def score_popularity(
    model: PopularityModel,
    event_vec: SparseVector | None,
    candidates: Sequence[int],
) -> list[tuple[int, float]]:
    """Non-personalized scores: the event vector is ignored by design."""
    del event_vec
    return [(int(s), float(model.counts[int(s)])) for s in candidates]


def make_popularity_recommender(model: PopularityModel):
    scores = model.counts.astype(np.float64)

    def recommend(event_vec: SparseVector) -> np.ndarray:
        del event_vec
        return scores

    return recommend


def popularity_trainer(
    dataset: InteractionDataset,
    train_indices: Sequence[int],
    point: Mapping,
    seed: int,
):
    """Harness adapter: fit popularity on the training events only."""
    del point, seed
    model = train_popularity(dataset.subset(train_indices))
    return make_popularity_recommender(model), {}


def save_popularity(
    model: PopularityModel, schema: FeatureSchema, path: str | Path
) -> None:
    doc = {
        "version": POPULARITY_FORMAT_VERSION,
        "schema_hash": schema.content_hash(),
        "counts": {sid: int(c) for sid, c in zip(schema.supplier_ids, model.counts)},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_popularity(path: str | Path, schema: FeatureSchema) -> PopularityModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != POPULARITY_FORMAT_VERSION:
        raise ValueError(f"unsupported popularity model version {doc.get('version')!r}")
    counts = np.array(
        [doc["counts"].get(sid, 0) for sid in schema.supplier_ids], dtype=np.int64
    )
    return PopularityModel(counts=counts)


def ablate_to_purchaser_only(dataset: InteractionDataset) -> InteractionDataset:
    """Strip the dataset down to supplier and purchaser identity features.

    The returned dataset drops the categorical and bag-of-words blocks from
    the schema and keeps only the purchaser one-hot in each event vector;
    participation sets are shared unchanged. The regular FM pipeline runs
    on it unmodified.
    """
    schema = dataset.schema
    if schema.purchaser_count == 0:
        raise ValueError("dataset schema has no purchaser block to ablate to")
    new_schema = replace(schema, categorical_blocks=(), vocabulary=())
    p = schema.purchaser_count
    events = []
    for ev in dataset.events:
        keep = ev.features.indices < p
        events.append(
            Event(
                event_id=ev.event_id,
                features=SparseVector(
                    ev.features.indices[keep], ev.features.values[keep]
                ),
                participants=ev.participants,
            )
        )
    return InteractionDataset(schema=new_schema, events=tuple(events))
