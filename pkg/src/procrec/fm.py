"""Degree-2 factorization machine: parameter store, scoring, persistence.

Scoring uses the factorized identity
``sum_i sum_{j>i} <v_i, v_j> x_i x_j = 0.5 * sum_f [(sum_i v_if x_i)^2 - sum_i v_if^2 x_i^2]``
so a prediction costs O(nnz * D) instead of O(n^2 * D). All arithmetic is
double precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .features import FeatureSchema, SparseVector

MODEL_FORMAT_VERSION = 1


class SchemaMismatchError(ValueError):
    """Raised when a persisted model does not match the provided schema."""


@dataclass(eq=False)
class FMParameters:
    """Model parameters: intercept, linear weights, latent factor matrix.

    Mutable while training; treat as frozen afterwards (scoring never
    mutates).
    """

    w0: float
    w: np.ndarray
    V: np.ndarray

    @property
    def n_features(self) -> int:
        return int(self.w.shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.V.shape[1])

    def validate(self) -> None:
        if self.V.shape[0] != self.w.shape[0]:
            raise ValueError("V row count must equal w length")
        if not (
            np.isfinite(self.w0)
            and np.all(np.isfinite(self.w))
            and np.all(np.isfinite(self.V))
        ):
            raise ValueError("parameters contain non-finite values")

    def copy(self) -> "FMParameters":
        return FMParameters(w0=self.w0, w=self.w.copy(), V=self.V.copy())


def init_params(
    n: int, latent_dim: int, init_sigma: float = 0.1, seed=None
) -> FMParameters:
    """Zero intercept and linear weights; Gaussian latent factors.

    The Gaussian draw breaks the symmetry of the pairwise term;
    ``init_sigma = 0`` gives an all-zero (degenerate) factor matrix.
    """
    if n < 1 or latent_dim < 1:
        raise ValueError("n and latent_dim must be positive")
    if init_sigma < 0:
        raise ValueError("init_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    return FMParameters(
        w0=0.0,
        w=np.zeros(n, dtype=np.float64),
        V=rng.normal(0.0, init_sigma, size=(n, latent_dim)),
    )


@njit(cache=True, nogil=True, inline="always")
def _score_into(w0, w, V, idx, val, q):
    """Factorized FM score; fills q with the per-factor weighted sums."""
    d = V.shape[1]
    for f in range(d):
        q[f] = 0.0
    lin = 0.0
    ssum = 0.0
    for t in range(idx.shape[0]):
        i = idx[t]
        x = val[t]
        lin += w[i] * x
        for f in range(d):
            vfx = V[i, f] * x
            q[f] += vfx
            ssum += vfx * vfx
    qq = 0.0
    for f in range(d):
        qq += q[f] * q[f]
    return w0 + lin + 0.5 * (qq - ssum)


@njit(cache=True, nogil=True)
def _score_one(w0, w, V, idx, val):
    q = np.empty(V.shape[1], dtype=np.float64)
    return _score_into(w0, w, V, idx, val, q)


@njit(cache=True, nogil=True)
def _score_suppliers(w0, w, V, candidates, ev_idx, ev_val, out):
    """Score one instance per candidate supplier over a shared event vector.

    Each candidate is scored exactly as the corresponding concatenated
    instance would be, so batch results match per-instance scoring bit for
    bit.
    """
    m = ev_idx.shape[0]
    buf_idx = np.empty(m + 1, dtype=np.int64)
    buf_val = np.empty(m + 1, dtype=np.float64)
    buf_idx[1:] = ev_idx
    buf_val[1:] = ev_val
    buf_val[0] = 1.0
    q = np.empty(V.shape[1], dtype=np.float64)
    for c in range(candidates.shape[0]):
        buf_idx[0] = candidates[c]
        out[c] = _score_into(w0, w, V, buf_idx, buf_val, q)


def score(params: FMParameters, x: SparseVector) -> float:
    """Predicted relevance of one sparse instance."""
    if x.nnz and x.indices[-1] >= params.n_features:
        raise ValueError(
            f"instance index {int(x.indices[-1])} out of range "
            f"[0, {params.n_features})"
        )
    return float(_score_one(params.w0, params.w, params.V, x.indices, x.values))


def score_candidates(
    params: FMParameters,
    event_vec: SparseVector,
    candidates: Sequence[int],
    schema: FeatureSchema,
) -> list[tuple[int, float]]:
    """Score each candidate supplier against one event, preserving order."""
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size and (cand.min() < 0 or cand.max() >= schema.supplier_count):
        raise ValueError("candidate supplier index out of range")
    scores = _scores_for(params, event_vec, cand, schema)
    return [(int(s), float(v)) for s, v in zip(cand, scores)]


def score_all_suppliers(
    params: FMParameters, event_vec: SparseVector, schema: FeatureSchema
) -> np.ndarray:
    """Scores for every supplier in the schema, in supplier index order."""
    cand = np.arange(schema.supplier_count, dtype=np.int64)
    return _scores_for(params, event_vec, cand, schema)


def _scores_for(params, event_vec, cand, schema):
    if event_vec.nnz and event_vec.indices[-1] >= schema.total_event_features:
        raise ValueError("event vector index exceeds event feature space")
    if params.n_features != schema.n_features:
        raise ValueError(
            f"parameter size {params.n_features} does not match schema "
            f"size {schema.n_features}"
        )
    gidx = event_vec.indices + schema.supplier_count
    out = np.empty(cand.size, dtype=np.float64)
    _score_suppliers(params.w0, params.w, params.V, cand, gidx, event_vec.values, out)
    return out


def make_recommender(params: FMParameters, schema: FeatureSchema):
    """Scoring closure mapping an event vector to per-supplier scores."""

    def recommend(event_vec: SparseVector) -> np.ndarray:
        return score_all_suppliers(params, event_vec, schema)

    return recommend


def save_model(params: FMParameters, schema: FeatureSchema, path: str | Path) -> None:
    """Persist parameters as versioned JSON pinned to the schema's hash."""
    params.validate()
    if params.n_features != schema.n_features:
        raise ValueError("parameters do not match schema size")
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "n": params.n_features,
        "D": params.latent_dim,
        "schema_hash": schema.content_hash(),
        "w0": params.w0,
        "w": params.w.tolist(),
        "V": params.V.ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path: str | Path, schema: FeatureSchema) -> FMParameters:
    """Load a persisted model, rejecting schema mismatches."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    if doc["schema_hash"] != schema.content_hash():
        raise SchemaMismatchError(
            "model was trained against a different schema "
            f"(stored hash {doc['schema_hash'][:12]}..., "
            f"schema hash {schema.content_hash()[:12]}...)"
        )
    n, d = int(doc["n"]), int(doc["D"])
    if n != schema.n_features:
        raise SchemaMismatchError("stored feature count does not match schema")
    params = FMParameters(
        w0=float(doc["w0"]),
        w=np.asarray(doc["w"], dtype=np.float64),
        V=np.asarray(doc["V"], dtype=np.float64).reshape(n, d),
    )
    params.validate()
    return params
