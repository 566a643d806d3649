"""Sparse feature space over suppliers and event meta-data.

The global feature layout is supplier-first: a one-hot block for the
supplier identity, followed by the event-feature blocks (purchaser one-hot,
one block per categorical field, bag-of-words counts). Event vectors live in
their own index space of size ``total_event_features`` and are shifted by the
supplier block size when concatenated into a full training instance.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_FORMAT_VERSION = 1

DEFAULT_CATEGORICAL_FIELDS = ("timezone", "auction_type")

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop tokens shorter than 2.

    Duplicates are preserved; counting is the caller's business.
    """
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Immutable sparse vector as parallel index/value arrays.

    Indices are strictly increasing and no explicit zeros are stored.
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or val.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size:
            if idx[0] < 0:
                raise ValueError("negative feature index")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise ValueError("values must be finite")
        if np.any(val == 0.0):
            raise ValueError("explicit zero values are not stored")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, float]]) -> "SparseVector":
        pairs = sorted(entries)
        idx = np.array([i for i, _ in pairs], dtype=np.int64)
        val = np.array([v for _, v in pairs], dtype=np.float64)
        return cls(idx, val)

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )

    def __repr__(self) -> str:
        return f"SparseVector({self.entries!r})"


@dataclass(frozen=True)
class FeatureSchema:
    """Fixed layout of the global feature space.

    Blocks are contiguous and non-overlapping: the supplier one-hot block
    comes first, then (in event-feature space) the purchaser one-hot block,
    the categorical blocks in declared order, and the vocabulary block.
    """

    supplier_ids: tuple[str, ...]
    purchaser_ids: tuple[str, ...]
    categorical_blocks: tuple[tuple[str, tuple[str, ...]], ...]
    vocabulary: tuple[str, ...]
    binary_bow: bool = False

    def __post_init__(self) -> None:
        for name, items in (
            ("supplier", self.supplier_ids),
            ("purchaser", self.purchaser_ids),
            ("vocabulary", self.vocabulary),
        ):
            if len(set(items)) != len(items):
                raise ValueError(f"duplicate {name} entries in schema")
        seen: set[str] = set()
        for block_name, levels in self.categorical_blocks:
            if block_name in seen:
                raise ValueError(f"duplicate categorical block {block_name!r}")
            seen.add(block_name)
            if len(set(levels)) != len(levels):
                raise ValueError(f"duplicate levels in categorical block {block_name!r}")

    @property
    def supplier_count(self) -> int:
        return len(self.supplier_ids)

    @property
    def purchaser_count(self) -> int:
        return len(self.purchaser_ids)

    @property
    def total_event_features(self) -> int:
        cats = sum(len(levels) for _, levels in self.categorical_blocks)
        return self.purchaser_count + cats + len(self.vocabulary)

    @property
    def n_features(self) -> int:
        """Total feature space size: suppliers plus event features."""
        return self.supplier_count + self.total_event_features

    @cached_property
    def supplier_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.supplier_ids)}

    @cached_property
    def purchaser_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.purchaser_ids)}

    @cached_property
    def categorical_offsets(self) -> dict[str, int]:
        """Event-space offset of each categorical block."""
        offsets = {}
        pos = self.purchaser_count
        for name, levels in self.categorical_blocks:
            offsets[name] = pos
            pos += len(levels)
        return offsets

    @cached_property
    def categorical_level_index(self) -> dict[str, dict[str, int]]:
        return {
            name: {lvl: i for i, lvl in enumerate(levels)}
            for name, levels in self.categorical_blocks
        }

    @cached_property
    def vocabulary_offset(self) -> int:
        return self.total_event_features - len(self.vocabulary)

    @cached_property
    def token_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.vocabulary)}

    def to_json_dict(self) -> dict:
        return {
            "version": SCHEMA_FORMAT_VERSION,
            "suppliers": list(self.supplier_ids),
            "purchasers": list(self.purchaser_ids),
            "categoricals": [
                {"name": name, "levels": list(levels)}
                for name, levels in self.categorical_blocks
            ],
            "vocabulary": list(self.vocabulary),
            "binary_bow": self.binary_bow,
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "FeatureSchema":
        version = doc.get("version")
        if version != SCHEMA_FORMAT_VERSION:
            raise ValueError(f"unsupported schema version {version!r}")
        return cls(
            supplier_ids=tuple(doc["suppliers"]),
            purchaser_ids=tuple(doc["purchasers"]),
            categorical_blocks=tuple(
                (blk["name"], tuple(blk["levels"])) for blk in doc["categoricals"]
            ),
            vocabulary=tuple(doc["vocabulary"]),
            binary_bow=bool(doc.get("binary_bow", False)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def content_hash(self) -> str:
        """Stable hash of the schema content, used to pin models to schemas."""
        canonical = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_schema(
    events: Sequence[Mapping],
    suppliers: Sequence[str],
    min_token_count: int = 1,
    categorical_fields: Sequence[str] = DEFAULT_CATEGORICAL_FIELDS,
    binary_bow: bool = False,
) -> FeatureSchema:
    """Derive the feature space from raw event records and a supplier list.

    The schema covers every supplier, every purchaser appearing in the
    events, every observed categorical level, and every token whose corpus
    frequency is at least ``min_token_count``. Categorical fields with no
    observed level are dropped entirely.
    """
    if not events:
        raise ValueError("cannot build a schema from an empty event list")
    if not suppliers:
        raise ValueError("supplier list must be nonempty")
    if len(set(suppliers)) != len(suppliers):
        raise ValueError("supplier list contains duplicates")
    if min_token_count < 1:
        raise ValueError("min_token_count must be >= 1")

    purchasers = sorted(
        {str(e["purchaser_id"]) for e in events if e.get("purchaser_id") is not None}
    )

    blocks = []
    for field_name in categorical_fields:
        levels = sorted(
            {str(e[field_name]) for e in events if e.get(field_name) is not None}
        )
        if levels:
            blocks.append((field_name, tuple(levels)))

    counts: Counter[str] = Counter()
    for e in events:
        counts.update(tokenize(str(e.get("description", ""))))
    vocabulary = tuple(sorted(t for t, c in counts.items() if c >= min_token_count))

    return FeatureSchema(
        supplier_ids=tuple(suppliers),
        purchaser_ids=tuple(purchasers),
        categorical_blocks=tuple(blocks),
        vocabulary=vocabulary,
        binary_bow=binary_bow,
    )


def encode_event(event: Mapping, schema: FeatureSchema) -> SparseVector:
    """Encode raw event meta-data into event-feature space (dimension M).

    Unknown purchasers or categorical levels leave their block all-zero and
    are logged as warnings: cold-start events must remain scorable. Tokens
    outside the vocabulary are ignored.
    """
    entries: dict[int, float] = {}
    event_id = event.get("event_id", "<unknown>")

    purchaser = event.get("purchaser_id")
    pidx = schema.purchaser_index.get(str(purchaser)) if purchaser is not None else None
    if pidx is None:
        logger.warning(
            "event %s: unknown purchaser %r, purchaser block left empty",
            event_id,
            purchaser,
        )
    else:
        entries[pidx] = 1.0

    for name, _levels in schema.categorical_blocks:
        level = event.get(name)
        lidx = (
            schema.categorical_level_index[name].get(str(level))
            if level is not None
            else None
        )
        if lidx is None:
            logger.warning(
                "event %s: unknown %s level %r, block left empty", event_id, name, level
            )
        else:
            entries[schema.categorical_offsets[name] + lidx] = 1.0

    bow_offset = schema.vocabulary_offset
    for token in tokenize(str(event.get("description", ""))):
        tidx = schema.token_index.get(token)
        if tidx is None:
            continue
        if schema.binary_bow:
            entries[bow_offset + tidx] = 1.0
        else:
            entries[bow_offset + tidx] = entries.get(bow_offset + tidx, 0.0) + 1.0

    return SparseVector.from_entries(entries.items())


def encode_instance(
    supplier: int, event_vec: SparseVector, schema: FeatureSchema
) -> SparseVector:
    """Concatenate a supplier one-hot with an event vector into a full instance.

    The result has 1.0 at the supplier's position and the event entries
    shifted past the supplier block.
    """
    if not 0 <= supplier < schema.supplier_count:
        raise ValueError(
            f"supplier index {supplier} out of range [0, {schema.supplier_count})"
        )
    if event_vec.nnz and event_vec.indices[-1] >= schema.total_event_features:
        raise ValueError("event vector index exceeds event feature space")
    offset = schema.supplier_count
    idx = np.concatenate(([supplier], event_vec.indices + offset))
    val = np.concatenate(([1.0], event_vec.values))
    return SparseVector(idx, val)
