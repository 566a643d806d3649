import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procrec.dataset import Event, InteractionDataset
from procrec.features import FeatureSchema, SparseVector
from procrec.metrics import (
    MetricsReport,
    RankedList,
    evaluate_fold,
    ndcg_at_k,
    precision_at_k,
    rank_suppliers,
    recall_at_k,
)


def reference_precision(ranked, gt, k):
    return len(set(ranked[:k]) & set(gt)) / k


def reference_recall(ranked, gt, k):
    return len(set(ranked[:k]) & set(gt)) / len(gt)


def reference_ndcg(ranked, gt, k):
    """Direct evaluation of the two discounted sums."""
    gt = set(gt)
    dcg = 0.0
    for i in range(1, k + 1):
        if i <= len(ranked) and ranked[i - 1] in gt:
            dcg += 1.0 / math.log2(i + 1)
    ideal = 0.0
    for i in range(1, min(k, len(gt)) + 1):
        ideal += 1.0 / math.log2(i + 1)
    return dcg / ideal


def ranked(*suppliers):
    return RankedList(event_id="e", ranked_suppliers=tuple(suppliers))


class TestPrecision:
    def test_three_of_five(self):
        assert precision_at_k(ranked(0, 1, 2, 3, 4), {0, 2, 4, 9}) == 0.6

    def test_no_hits(self):
        assert precision_at_k(ranked(0, 1), {5}) == 0.0

    def test_perfect_list(self):
        assert precision_at_k(ranked(3, 4), {3, 4, 5}) == 1.0


class TestRecall:
    def test_half(self):
        assert recall_at_k(ranked(0, 1, 2), {0, 1, 7, 8}) == 0.5

    def test_full(self):
        assert recall_at_k(ranked(0, 1, 2), {1, 2}) == 1.0

    def test_no_hits(self):
        assert recall_at_k(ranked(0, 1), {5, 6}) == 0.0

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(ValueError):
            recall_at_k(ranked(0), set())


class TestNdcg:
    def test_all_positions_hit(self):
        assert ndcg_at_k(ranked(0, 1, 2), {0, 1, 2, 3}) == 1.0

    def test_single_hit_at_rank_two(self):
        expected = (1 / math.log2(3)) / (1 / math.log2(2))
        value = ndcg_at_k(ranked(9, 4), {4})
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(0.6309, abs=1e-4)

    def test_matches_independent_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = 12
            k = int(rng.integers(1, 8))
            order = rng.permutation(n)[:k]
            gt = set(rng.choice(n, size=int(rng.integers(1, 6)), replace=False).tolist())
            mine = ndcg_at_k(RankedList("e", tuple(int(i) for i in order)), gt)
            assert mine == pytest.approx(
                reference_ndcg([int(i) for i in order], gt, k), abs=1e-12
            )

    def test_ranked_list_rejects_duplicates(self):
        with pytest.raises(ValueError):
            RankedList("e", (1, 1))


class TestRankSuppliers:
    def test_descending_scores(self):
        assert rank_suppliers(np.array([0.1, 0.9, 0.5])).tolist() == [1, 2, 0]

    def test_ties_broken_by_ascending_index(self):
        assert rank_suppliers(np.array([0.5, 0.7, 0.5, 0.7])).tolist() == [1, 3, 0, 2]

    def test_all_equal(self):
        assert rank_suppliers(np.zeros(4)).tolist() == [0, 1, 2, 3]


def make_dataset(participants_per_event, n_suppliers=8):
    schema = FeatureSchema(
        tuple(f"s{i}" for i in range(n_suppliers)), ("p0",), (), ()
    )
    events = tuple(
        Event(
            f"e{i}",
            SparseVector.from_entries([(0, float(i + 1))]),
            frozenset(parts),
        )
        for i, parts in enumerate(participants_per_event)
    )
    return InteractionDataset(schema=schema, events=events)


def scripted_recommender(dataset, scores_by_event):
    """Look up per-event score vectors through the event feature value."""

    def recommend(event_vec):
        key = int(event_vec.values[0]) - 1
        return np.asarray(scores_by_event[key], dtype=float)

    return recommend


class TestEvaluateFold:
    def test_perfect_ranking_single_event(self):
        ds = make_dataset([{0, 1, 2}])
        scores = [[9, 8, 7, 0, 0, 0, 0, 0]]
        reports = evaluate_fold(scripted_recommender(ds, scores), [0], ds, ks=[1, 2, 3])
        for r in reports:
            assert r.mean_precision == 1.0
            assert r.mean_ndcg == 1.0
        assert reports[2].mean_recall == 1.0

    def test_mean_over_events(self):
        ds = make_dataset([{0}, {0, 1, 2}])
        # event 0: 1 hit of 5 -> p 0.2 ; event 1: 3 hits of 5 -> p 0.6
        scores = [
            [9, 8, 7, 6, 5, 0, 0, 0],
            [9, 8, 7, 6, 5, 0, 0, 0],
        ]
        reports = evaluate_fold(scripted_recommender(ds, scores), [0, 1], ds, ks=[5])
        assert reports[0].mean_precision == pytest.approx(0.4, abs=1e-12)

    def test_excludes_empty_ground_truth(self):
        ds = make_dataset([{0}, set()])
        scores = [[1] * 8, [1] * 8]
        [report] = evaluate_fold(scripted_recommender(ds, scores), [0, 1], ds, ks=[3])
        assert report.n_events_evaluated == 1
        assert report.n_events_excluded == 1

    def test_non_finite_scores_rejected(self):
        ds = make_dataset([{0}])
        scores = [[np.nan] * 8]
        with pytest.raises(ValueError, match="non-finite"):
            evaluate_fold(scripted_recommender(ds, scores), [0], ds, ks=[1])

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(31)
        parts = [set(rng.choice(8, size=int(rng.integers(1, 5)), replace=False).tolist()) for _ in range(6)]
        ds = make_dataset(parts)
        scores = [rng.normal(size=8).tolist() for _ in range(6)]
        ks = [1, 2, 3, 5, 8]
        reports = evaluate_fold(scripted_recommender(ds, scores), range(6), ds, ks=ks)
        for k, report in zip(ks, reports):
            precs, recs, ndcgs = [], [], []
            for e in range(6):
                order = sorted(range(8), key=lambda s: (-scores[e][s], s))
                precs.append(reference_precision(order, parts[e], k))
                recs.append(reference_recall(order, parts[e], k))
                ndcgs.append(reference_ndcg(order, parts[e], k))
            assert report.mean_precision == pytest.approx(np.mean(precs), abs=1e-12)
            assert report.mean_recall == pytest.approx(np.mean(recs), abs=1e-12)
            assert report.mean_ndcg == pytest.approx(np.mean(ndcgs), abs=1e-12)

    def test_invalid_ks(self):
        ds = make_dataset([{0}])
        with pytest.raises(ValueError):
            evaluate_fold(scripted_recommender(ds, [[1] * 8]), [0], ds, ks=[])
        with pytest.raises(ValueError):
            evaluate_fold(scripted_recommender(ds, [[1] * 8]), [0], ds, ks=[0])

    def test_report_bounds_validated(self):
        with pytest.raises(ValueError):
            MetricsReport(
                k=1,
                mean_precision=1.5,
                mean_recall=0.0,
                mean_ndcg=0.0,
                n_events_evaluated=1,
            )


@st.composite
def ranking_case(draw):
    n = draw(st.integers(4, 15))
    k = draw(st.integers(1, n))
    perm = draw(st.permutations(range(n)))
    gt = draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n))
    return tuple(perm[:k]), gt, n


class TestProperties:
    @given(case=ranking_case())
    @settings(max_examples=200, deadline=None)
    def test_cross_metric_consistency(self, case):
        topk, gt, _ = case
        rl = RankedList("e", topk)
        hits = len(set(topk) & gt)
        assert precision_at_k(rl, gt) * rl.k == pytest.approx(hits, abs=1e-9)
        assert recall_at_k(rl, gt) * len(gt) == pytest.approx(hits, abs=1e-9)

    @given(case=ranking_case())
    @settings(max_examples=200, deadline=None)
    def test_ndcg_bounds_and_perfection(self, case):
        topk, gt, _ = case
        rl = RankedList("e", topk)
        value = ndcg_at_k(rl, gt)
        assert 0.0 <= value <= 1.0 + 1e-12
        head = topk[: min(rl.k, len(gt))]
        perfect = set(head) <= gt
        assert (abs(value - 1.0) < 1e-12) == perfect

    @given(case=ranking_case())
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_list_extension(self, case):
        topk, gt, n = case
        rl = RankedList("e", topk)
        remaining = [s for s in range(n) if s not in topk]
        if not remaining:
            return
        extended = RankedList("e", topk + (remaining[0],))
        assert recall_at_k(extended, gt) >= recall_at_k(rl, gt)
        dcg = ndcg_at_k(rl, gt) * sum(
            1 / math.log2(i + 2) for i in range(min(rl.k, len(gt)))
        )
        dcg_ext = ndcg_at_k(extended, gt) * sum(
            1 / math.log2(i + 2) for i in range(min(extended.k, len(gt)))
        )
        assert dcg_ext >= dcg - 1e-12

    @given(seed=st.integers(0, 2**31), k=st.integers(1, 4))
    @settings(max_examples=60, deadline=None)
    def test_invariant_below_cutoff(self, seed, k):
        # reshuffling scores among suppliers ranked past the cutoff cannot
        # change any metric at or below it
        rng = np.random.default_rng(seed)
        n = 8
        parts = set(rng.choice(n, size=3, replace=False).tolist())
        ds = make_dataset([parts], n_suppliers=n)
        scores = rng.permutation(n).astype(float)  # distinct, no boundary ties
        base = evaluate_fold(scripted_recommender(ds, [scores.tolist()]), [0], ds, ks=[k])
        below = rank_suppliers(scores)[k:]
        shuffled = scores.copy()
        shuffled[below] = scores[below][rng.permutation(below.size)]
        alt = evaluate_fold(
            scripted_recommender(ds, [shuffled.tolist()]), [0], ds, ks=[k]
        )
        assert base == alt
