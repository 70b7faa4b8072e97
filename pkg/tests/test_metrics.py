import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starcrs.errors import EmptyInputError, ShapeMismatchError
from starcrs.metrics import (GenMetricsReport, bleu_n, dist_n, gen_metrics,
                             items_by_score, popularity_baseline, rank_metrics,
                             rouge_2, rouge_l)


def naive_rank(rankings, targets, Ks):
    # oracle: literal per-pair loop, no shared code with the implementation
    rec = {k: [] for k in Ks}
    ndcg = {k: [] for k in Ks}
    mrr = {k: [] for k in Ks}
    for ranking, ts in zip(rankings, targets):
        for t in ts:
            rank = None
            for i, item in enumerate(ranking):
                if item == t:
                    rank = i + 1
                    break
            for k in Ks:
                if rank is not None and rank <= k:
                    rec[k].append(1.0)
                    ndcg[k].append(1.0 / math.log2(rank + 1))
                    mrr[k].append(1.0 / rank)
                else:
                    rec[k].append(0.0)
                    ndcg[k].append(0.0)
                    mrr[k].append(0.0)
    out = {}
    for k in Ks:
        out[("recall", k)] = sum(rec[k]) / max(len(rec[k]), 1)
        out[("ndcg", k)] = sum(ndcg[k]) / max(len(ndcg[k]), 1)
        out[("mrr", k)] = sum(mrr[k]) / max(len(mrr[k]), 1)
    return out


class TestRankMetrics:
    def test_rank_one_perfect(self):
        rep = rank_metrics([[7, 3, 5]], [[7]], Ks=(1, 10))
        assert rep.recall[1] == 1.0 and rep.recall[10] == 1.0
        assert rep.ndcg[10] == 1.0 and rep.mrr[10] == 1.0

    def test_rank_three_anchor(self):
        # 1/log2(4) = 0.5 exactly, 1/3 reciprocal rank
        rep = rank_metrics([[9, 8, 7, 6]], [[7]], Ks=(1, 10))
        assert rep.ndcg[10] == 0.5
        assert rep.mrr[10] == pytest.approx(1.0 / 3.0, abs=0)
        assert rep.recall[1] == 0.0 and rep.recall[10] == 1.0

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n_items = int(rng.integers(5, 60))
            n_samples = int(rng.integers(1, 6))
            rankings, targets = [], []
            for _ in range(n_samples):
                rankings.append(list(rng.permutation(n_items)))
                n_t = int(rng.integers(1, 4))
                targets.append(list(rng.choice(n_items, size=n_t, replace=False)))
            Ks = (1, 5, 10)
            rep = rank_metrics(rankings, targets, Ks=Ks)
            want = naive_rank(rankings, targets, Ks)
            for k in Ks:
                assert abs(rep.recall[k] - want[("recall", k)]) < 1e-12
                assert abs(rep.ndcg[k] - want[("ndcg", k)]) < 1e-12
                assert abs(rep.mrr[k] - want[("mrr", k)]) < 1e-12

    def test_empty_targets_excluded_and_counted(self):
        rep = rank_metrics([[1, 2], [2, 1]], [[2], []], Ks=(1,))
        assert rep.sample_count == 1
        assert rep.skipped_empty == 1
        assert rep.recall[1] == 0.0

    def test_missing_target_scores_zero(self):
        rep = rank_metrics([[1, 2, 3]], [[99]], Ks=(10,))
        assert rep.recall[10] == 0.0 and rep.mrr[10] == 0.0

    def test_duplicate_ranking_rejected(self):
        with pytest.raises(ShapeMismatchError):
            rank_metrics([[1, 1, 2]], [[1]], Ks=(1,))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            rank_metrics([[1, 2]], [[1], [2]], Ks=(1,))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_metric_order_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        rankings = [list(rng.permutation(n)) for _ in range(3)]
        targets = [list(rng.choice(n, size=2, replace=False)) for _ in range(3)]
        rep = rank_metrics(rankings, targets, Ks=(1, 10, 50))
        assert rep.recall[1] <= rep.recall[10] <= rep.recall[50]
        for k in (10, 50):
            assert rep.mrr[k] <= rep.ndcg[k] + 1e-12
            assert rep.ndcg[k] <= rep.recall[k] + 1e-12


class TestGenMetrics:
    def test_identical_is_one(self):
        rep = gen_metrics(["the quick brown fox jumps"],
                          ["the quick brown fox jumps"])
        assert rep.bleu[2] == pytest.approx(1.0, abs=1e-12)
        assert rep.bleu[3] == pytest.approx(1.0, abs=1e-12)
        assert rep.rouge2 == 1.0 and rep.rougeL == 1.0

    def test_rouge_l_hand_value(self):
        # LCS("a b c", "a c") = 2: P = 2/3, R = 1, F1 = 0.8
        assert rouge_l(["a", "b", "c"], ["a", "c"]) == pytest.approx(0.8)

    def test_dist2_anchor(self):
        # "a b a b" has bigrams (a,b),(b,a),(a,b): 2 distinct over 1 response
        assert dist_n([["a", "b", "a", "b"]], 2) == 2.0
        rep = gen_metrics(["a b a b"], ["a b a b"])
        assert rep.dist[2] == 2.0

    def test_dist_order_invariance(self):
        hs = [["x", "y"], ["y", "z"], ["x", "y"]]
        assert dist_n(hs, 2) == dist_n(list(reversed(hs)), 2)

    def test_bleu_brevity_penalty(self):
        # hyp is a strict prefix: precisions are 1, only BP remains
        h = ["a", "b", "c"]
        r = ["a", "b", "c", "d", "e"]
        want = math.exp(1.0 - 5.0 / 3.0)
        assert bleu_n(h, r, 2) == pytest.approx(want, rel=1e-12)

    def test_bleu_clipping(self):
        # "a a a a" vs "a": unigram precision clipped to 1/4
        h = ["a", "a", "a", "a"]
        r = ["a"]
        got = bleu_n(h, r, 2)
        # bigram precision is 0 -> eps smoothing dominates
        want = math.exp(0.5 * (math.log(0.25) + math.log(1e-9)))
        assert got == pytest.approx(want, rel=1e-9)

    def test_empty_hypothesis_zero(self):
        assert bleu_n([], ["a"], 2) == 0.0
        rep = gen_metrics([""], ["a b"])
        assert rep.bleu[2] == 0.0
        assert rep.rouge2 == 0.0 and rep.rougeL == 0.0

    def test_rouge2_hand_value(self):
        # hyp bigrams {(a,b),(b,c)}, ref bigrams {(a,b),(b,d)}: 1 hit
        p, r = 1 / 2, 1 / 2
        want = 2 * p * r / (p + r)
        assert rouge_2(["a", "b", "c"], ["a", "b", "d"]) == pytest.approx(want)

    def test_corpus_against_itself(self):
        texts = ["i liked the premise a lot",
                 "what about something scarier",
                 "sure here is one more pick for tonight"]
        rep = gen_metrics(texts, texts)
        assert rep.bleu[2] == pytest.approx(1.0, abs=1e-12)
        assert rep.rouge2 == pytest.approx(1.0)
        assert rep.rougeL == pytest.approx(1.0)
        assert rep.response_count == 3

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            gen_metrics(["a"], ["a", "b"])

    def test_case_normalization(self):
        rep = gen_metrics(["The Fox"], ["the fox"])
        assert rep.bleu[2] == pytest.approx(1.0, abs=1e-12)

    def test_report_serialization(self):
        rep = gen_metrics(["a b c"], ["a b c"])
        d = rep.to_dict()
        assert d["bleu-2"] == pytest.approx(1.0)
        assert "dist-4" in d
        assert isinstance(rep, GenMetricsReport)
        assert "BLEU-2" in rep.to_table()


class _Conv:
    def __init__(self, targets):
        self.target_items = targets


class TestBaselineAndRanking:
    def test_popularity_ordering(self):
        convs = [_Conv([3]), _Conv([3]), _Conv([5]), _Conv([5]), _Conv([1])]
        out = popularity_baseline(convs, all_items=[1, 3, 5, 7, 9])
        # 3 and 5 tie at two: ascending id first; unseen 7, 9 trail
        assert out == [3, 5, 1, 7, 9]

    def test_popularity_covers_all_items(self):
        out = popularity_baseline([], all_items=[4, 2, 8])
        assert out == [2, 4, 8]

    def test_items_by_score_ties(self):
        out = items_by_score([5, 2, 9], np.array([0.5, 0.5, 0.9]))
        assert out == [9, 2, 5]

    def test_items_by_score_empty(self):
        with pytest.raises(EmptyInputError):
            items_by_score([], np.zeros(0))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rank_invariant_under_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        ids = list(range(12))
        scores = rng.normal(size=12)
        a = items_by_score(ids, scores)
        b = items_by_score(ids, np.tanh(scores) * 3.0 + 1.0)
        assert a == b
