"""Pairwise ranking trainer for the factorization machine.

Each observed (event, supplier) participation is a positive instance; for
every visit a configurable number of non-participating suppliers is sampled
uniformly as negatives, and stochastic gradient ascent pushes the positive
score above the negative score through the sigmoid-smoothed pair objective.
An isotropic Gaussian prior on the parameters enters as lazy L2 shrinkage of
the parameters touched by each pair.

The epoch loop is compiled with numba; all randomness (factor init, epoch
shuffles, negative draws, probe pairs) is pre-drawn from named streams
spawned off the single config seed, so training is deterministic and the
compiled loop is pure arithmetic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np
from numba import njit

from .dataset import InteractionDataset
from .features import SparseVector
from .fm import FMParameters, _score_into, init_params, score

logger = logging.getLogger(__name__)

SIGMOID_CLAMP = 34.0
PROBE_SIZE = 128


class TrainingDivergedError(RuntimeError):
    """Raised when an update produces non-finite values."""


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int = 8
    n_iterations: int = 100
    learning_rate: float = 0.05
    lambda_reg: float = 0.01
    negatives_per_positive: int = 1
    init_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.init_sigma < 0:
            raise ValueError("init_sigma must be nonnegative")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**doc)


class TrainResult(NamedTuple):
    """Final parameters plus the probe loss curve.

    ``probe_loss[k]`` is the mean pair loss over a fixed probe sample after
    k epochs; entry 0 is measured before any update.
    """

    params: FMParameters
    probe_loss: np.ndarray


def sample_negative(
    event: int, dataset: InteractionDataset, rng: np.random.Generator
) -> int:
    """Uniformly sample a supplier that did not participate in the event."""
    indptr, pool = dataset.negative_pools
    lo, hi = int(indptr[event]), int(indptr[event + 1])
    if hi == lo:
        raise ValueError(
            f"event {event} has no negative: every supplier participated"
        )
    return int(pool[lo + rng.integers(hi - lo)])


def _clamp(d: float) -> float:
    return max(-SIGMOID_CLAMP, min(SIGMOID_CLAMP, d))


def pair_loss(params: FMParameters, x_pos: SparseVector, x_neg: SparseVector) -> float:
    """Negative log-likelihood of ranking the positive above the negative.

    Equals ``-log(sigmoid(score(x_pos) - score(x_neg)))``; the score
    difference is clamped to +-34 before exponentiation.
    """
    d = _clamp(score(params, x_pos) - score(params, x_neg))
    return math.log1p(math.exp(-d))


def pair_gradient(
    params: FMParameters, x_pos: SparseVector, x_neg: SparseVector
) -> tuple[float, np.ndarray, np.ndarray]:
    """Dense gradient of :func:`pair_loss` w.r.t. (w0, w, V).

    Untouched parameters have zero gradient; the intercept always does,
    since it cancels in the score difference. Intended for gradient
    checking and diagnostics, not the training hot path.
    """
    n, d = params.n_features, params.latent_dim
    diff = _clamp(score(params, x_pos) - score(params, x_neg))
    delta = 1.0 / (1.0 + math.exp(diff))

    g_w = np.zeros(n)
    g_v = np.zeros((n, d))
    for x, sign in ((x_pos, 1.0), (x_neg, -1.0)):
        idx, val = x.indices, x.values
        q = params.V[idx].T @ val if idx.size else np.zeros(d)
        np.add.at(g_w, idx, sign * val)
        contrib = val[:, None] * q[None, :] - params.V[idx] * (val**2)[:, None]
        np.add.at(g_v, idx, sign * contrib)
    return 0.0, -delta * g_w, -delta * g_v


@njit(cache=True, nogil=True)
def _pair_step(w0, w, V, pidx, pval, nidx, nval, lr, lam, qp, qn):
    """One SGD step on a (positive, negative) pair; mutates w0, w, V.

    Updates every parameter touched by either instance (and the intercept,
    whose pair gradient is zero, so it only shrinks). Returns 0 on success,
    1 when the score difference is non-finite.
    """
    d = V.shape[1]
    rp = _score_into(w0[0], w, V, pidx, pval, qp)
    rn = _score_into(w0[0], w, V, nidx, nval, qn)
    diff = rp - rn
    if not np.isfinite(diff):
        return 1
    if diff > SIGMOID_CLAMP:
        diff = SIGMOID_CLAMP
    elif diff < -SIGMOID_CLAMP:
        diff = -SIGMOID_CLAMP
    delta = 1.0 / (1.0 + math.exp(diff))

    w0[0] = w0[0] + lr * (-lam * w0[0])

    na, nb = pidx.shape[0], nidx.shape[0]
    a = 0
    b = 0
    while a < na or b < nb:
        if b >= nb or (a < na and pidx[a] < nidx[b]):
            i = pidx[a]
            xp = pval[a]
            xn = 0.0
            a += 1
        elif a >= na or pidx[a] > nidx[b]:
            i = nidx[b]
            xp = 0.0
            xn = nval[b]
            b += 1
        else:
            i = pidx[a]
            xp = pval[a]
            xn = nval[b]
            a += 1
            b += 1
        wi = w[i]
        w[i] = wi + lr * (delta * (xp - xn) - lam * wi)
        for f in range(d):
            vif = V[i, f]
            g = xp * (qp[f] - vif * xp) - xn * (qn[f] - vif * xn)
            V[i, f] = vif + lr * (delta * g - lam * vif)
    return 0


def pair_gradient_step(
    params: FMParameters,
    x_pos: SparseVector,
    x_neg: SparseVector,
    learning_rate: float,
    lambda_reg: float,
) -> None:
    """Apply one pairwise update in place.

    Ascends the per-pair log-posterior: touched parameters move along
    ``delta * d(score_diff)/d(theta) - lambda_reg * theta`` scaled by the
    learning rate, where ``delta = 1 - sigmoid(score_diff)``.
    """
    n = params.n_features
    for x in (x_pos, x_neg):
        if x.nnz and x.indices[-1] >= n:
            raise ValueError("instance index out of parameter range")
    w0_buf = np.array([params.w0])
    scratch_p = np.empty(params.latent_dim)
    scratch_n = np.empty(params.latent_dim)
    status = _pair_step(
        w0_buf,
        params.w,
        params.V,
        x_pos.indices,
        x_pos.values,
        x_neg.indices,
        x_neg.values,
        learning_rate,
        lambda_reg,
        scratch_p,
        scratch_n,
    )
    if status != 0:
        raise TrainingDivergedError(
            "non-finite score difference during update; try a smaller learning rate"
        )
    params.w0 = float(w0_buf[0])


@njit(cache=True, nogil=True)
def _probe_loss(
    w0v, w, V, probe_event, probe_sup, probe_neg, ev_indptr, ev_idx, ev_val, q, bi, bv
):
    total = 0.0
    n = probe_event.shape[0]
    if n == 0:
        return 0.0
    bv[0] = 1.0
    for t in range(n):
        e = probe_event[t]
        start = ev_indptr[e]
        nn = ev_indptr[e + 1] - start
        for u in range(nn):
            bi[1 + u] = ev_idx[start + u]
            bv[1 + u] = ev_val[start + u]
        bi[0] = probe_sup[t]
        rp = _score_into(w0v, w, V, bi[: nn + 1], bv[: nn + 1], q)
        bi[0] = probe_neg[t]
        rn = _score_into(w0v, w, V, bi[: nn + 1], bv[: nn + 1], q)
        diff = rp - rn
        if diff > SIGMOID_CLAMP:
            diff = SIGMOID_CLAMP
        elif diff < -SIGMOID_CLAMP:
            diff = -SIGMOID_CLAMP
        total += math.log1p(math.exp(-diff))
    return total / n


@njit(cache=True, nogil=True)
def _train_epochs(
    w0,
    w,
    V,
    lr,
    lam,
    pos_event,
    pos_sup,
    ev_indptr,
    ev_idx,
    ev_val,
    perms,
    negs,
    probe_event,
    probe_sup,
    probe_neg,
    losses,
):
    d = V.shape[1]
    qp = np.empty(d)
    qn = np.empty(d)
    max_nnz = 0
    for e in range(ev_indptr.shape[0] - 1):
        nn = ev_indptr[e + 1] - ev_indptr[e]
        if nn > max_nnz:
            max_nnz = nn
    pbi = np.empty(max_nnz + 1, dtype=np.int64)
    pbv = np.empty(max_nnz + 1, dtype=np.float64)
    nbi = np.empty(max_nnz + 1, dtype=np.int64)
    nbv = np.empty(max_nnz + 1, dtype=np.float64)

    losses[0] = _probe_loss(
        w0[0], w, V, probe_event, probe_sup, probe_neg,
        ev_indptr, ev_idx, ev_val, qp, pbi, pbv,
    )
    pbv[0] = 1.0
    nbv[0] = 1.0
    for ep in range(perms.shape[0]):
        for t in range(perms.shape[1]):
            p = perms[ep, t]
            e = pos_event[p]
            start = ev_indptr[e]
            nn = ev_indptr[e + 1] - start
            pbi[0] = pos_sup[p]
            for u in range(nn):
                gi = ev_idx[start + u]
                gv = ev_val[start + u]
                pbi[1 + u] = gi
                pbv[1 + u] = gv
                nbi[1 + u] = gi
                nbv[1 + u] = gv
            for j in range(negs.shape[2]):
                nbi[0] = negs[ep, t, j]
                status = _pair_step(
                    w0, w, V,
                    pbi[: nn + 1], pbv[: nn + 1],
                    nbi[: nn + 1], nbv[: nn + 1],
                    lr, lam, qp, qn,
                )
                if status != 0:
                    return 1
        losses[ep + 1] = _probe_loss(
            w0[0], w, V, probe_event, probe_sup, probe_neg,
            ev_indptr, ev_idx, ev_val, qp, pbi, pbv,
        )
        pbv[0] = 1.0
    return 0


def _pair_schedule(
    pos_event: np.ndarray,
    pool_indptr: np.ndarray,
    pool: np.ndarray,
    n_iterations: int,
    negatives_per_positive: int,
    shuffle_seed,
    negative_seed,
) -> tuple[np.ndarray, np.ndarray]:
    """Pre-draw the epoch visit orders and the negative supplier per visit.

    ``perms[ep]`` is the epoch's shuffled positive order; ``negs[ep, t, j]``
    is the j-th negative for the t-th visit, drawn uniformly from the
    visited event's non-participant pool.
    """
    npos = pos_event.shape[0]
    base = np.tile(np.arange(npos, dtype=np.int64), (n_iterations, 1))
    perms = np.random.default_rng(shuffle_seed).permuted(base, axis=1)
    u = np.random.default_rng(negative_seed).random(
        (n_iterations, npos, negatives_per_positive)
    )
    visited = pos_event[perms]
    lo = pool_indptr[visited]
    m = pool_indptr[visited + 1] - lo
    k = np.minimum((u * m[..., None]).astype(np.int64), m[..., None] - 1)
    negs = pool[lo[..., None] + k]
    return perms, negs


def train(dataset: InteractionDataset, config: TrainConfig) -> TrainResult:
    """Fit FM parameters by SGD over sampled positive/negative pairs.

    Every epoch revisits all positives in a fresh shuffled order and draws
    fresh negatives. The mean pair loss over a fixed probe sample is
    recorded before training and after each epoch. Deterministic under
    ``config.seed``.
    """
    if dataset.n_suppliers < 2:
        raise ValueError("training needs at least two suppliers")
    positives = dataset.positives()
    if positives.shape[0] == 0:
        raise ValueError("training needs at least one interaction")

    pool_indptr, pool = dataset.negative_pools
    pool_sizes = pool_indptr[positives[:, 0] + 1] - pool_indptr[positives[:, 0]]
    trainable = positives[pool_sizes > 0]
    if trainable.shape[0] < positives.shape[0]:
        logger.warning(
            "skipping %d positives whose events have no possible negative",
            positives.shape[0] - trainable.shape[0],
        )
    pos_event = np.ascontiguousarray(trainable[:, 0])
    pos_sup = np.ascontiguousarray(trainable[:, 1])
    npos = pos_event.shape[0]

    init_ss, shuffle_ss, neg_ss, probe_ss = np.random.SeedSequence(config.seed).spawn(4)
    params = init_params(
        dataset.schema.n_features, config.latent_dim, config.init_sigma, init_ss
    )

    probe_rng = np.random.default_rng(probe_ss)
    probe_n = min(PROBE_SIZE, npos)
    if probe_n:
        sel = np.sort(probe_rng.choice(npos, size=probe_n, replace=False))
        probe_event = pos_event[sel]
        probe_sup = pos_sup[sel]
        probe_neg = np.array(
            [
                pool[pool_indptr[e] + probe_rng.integers(pool_indptr[e + 1] - pool_indptr[e])]
                for e in probe_event
            ],
            dtype=np.int64,
        )
    else:
        probe_event = np.empty(0, dtype=np.int64)
        probe_sup = np.empty(0, dtype=np.int64)
        probe_neg = np.empty(0, dtype=np.int64)

    perms, negs = _pair_schedule(
        pos_event,
        pool_indptr,
        pool,
        config.n_iterations,
        config.negatives_per_positive,
        shuffle_ss,
        neg_ss,
    )

    ev_indptr, ev_idx, ev_val = dataset.event_feature_csr
    losses = np.zeros(config.n_iterations + 1)
    w0_buf = np.array([params.w0])
    status = _train_epochs(
        w0_buf,
        params.w,
        params.V,
        config.learning_rate,
        config.lambda_reg,
        pos_event,
        pos_sup,
        ev_indptr,
        ev_idx,
        ev_val,
        perms,
        negs,
        probe_event,
        probe_sup,
        probe_neg,
        losses,
    )
    if status != 0:
        raise TrainingDivergedError(
            "training produced non-finite scores; try a smaller learning rate"
        )
    params.w0 = float(w0_buf[0])
    params.validate()
    return TrainResult(params=params, probe_loss=losses)
