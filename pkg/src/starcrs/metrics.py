"""Ranking and generation metrics with brute-force-checkable definitions.

Rank metrics average over (sample, target) pairs. DIST-n follows the
dialogue-recommendation convention: distinct n-grams across all hypotheses
divided by the number of responses, so values above 1 are expected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError

EPS_BLEU = 1e-9


@dataclass
class RankMetricsReport:
    recall: dict
    ndcg: dict
    mrr: dict
    sample_count: int
    skipped_empty: int

    def to_dict(self) -> dict:
        out = {"sample_count": self.sample_count, "skipped_empty": self.skipped_empty}
        for k in sorted(self.recall):
            out[f"recall@{k}"] = self.recall[k]
        for k in sorted(self.ndcg):
            out[f"ndcg@{k}"] = self.ndcg[k]
        for k in sorted(self.mrr):
            out[f"mrr@{k}"] = self.mrr[k]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        cols = [f"R@{k}" for k in sorted(self.recall)] + \
            [f"N@{k}" for k in sorted(self.ndcg)] + \
            [f"M@{k}" for k in sorted(self.mrr)]
        vals = [self.recall[k] for k in sorted(self.recall)] + \
            [self.ndcg[k] for k in sorted(self.ndcg)] + \
            [self.mrr[k] for k in sorted(self.mrr)]
        head = "  ".join(f"{c:>8}" for c in cols)
        row = "  ".join(f"{v:8.4f}" for v in vals)
        return head + "\n" + row


@dataclass
class GenMetricsReport:
    bleu: dict
    rouge2: float
    rougeL: float
    dist: dict
    response_count: int

    def to_dict(self) -> dict:
        out = {"response_count": self.response_count,
               "rouge-2": self.rouge2, "rouge-l": self.rougeL}
        for n in sorted(self.bleu):
            out[f"bleu-{n}"] = self.bleu[n]
        for n in sorted(self.dist):
            out[f"dist-{n}"] = self.dist[n]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        cols = [f"BLEU-{n}" for n in sorted(self.bleu)] + ["ROUGE-2", "ROUGE-L"] + \
            [f"DIST-{n}" for n in sorted(self.dist)]
        vals = [self.bleu[n] for n in sorted(self.bleu)] + [self.rouge2, self.rougeL] + \
            [self.dist[n] for n in sorted(self.dist)]
        head = "  ".join(f"{c:>8}" for c in cols)
        row = "  ".join(f"{v:8.4f}" for v in vals)
        return head + "\n" + row


def rank_metrics(rankings, targets, Ks=(1, 10, 50)) -> RankMetricsReport:
    """Recall/NDCG/MRR at each K, averaged over (sample, target) pairs.

    A target at 1-based rank r contributes, for each K: recall 1 if r <= K,
    NDCG 1/log2(r+1) if r <= K, MRR 1/r if r <= K, else 0. Samples with no
    targets are excluded but counted.
    """
    if len(rankings) != len(targets):
        raise ShapeMismatchError("rankings and targets must align")
    Ks = sorted(set(int(k) for k in Ks))
    sums = {k: [0.0, 0.0, 0.0] for k in Ks}  # recall, ndcg, mrr
    pairs = 0
    skipped = 0
    used = 0
    for ranking, ts in zip(rankings, targets):
        if len(set(ranking)) != len(ranking):
            raise ShapeMismatchError("ranking contains duplicate item ids")
        if not ts:
            skipped += 1
            continue
        used += 1
        pos = {item: i + 1 for i, item in enumerate(ranking)}
        for t in ts:
            pairs += 1
            r = pos.get(t)
            if r is None:
                continue
            for k in Ks:
                if r <= k:
                    sums[k][0] += 1.0
                    sums[k][1] += 1.0 / np.log2(r + 1)
                    sums[k][2] += 1.0 / r
    denom = max(pairs, 1)
    return RankMetricsReport(
        recall={k: sums[k][0] / denom for k in Ks},
        ndcg={k: sums[k][1] / denom for k in Ks},
        mrr={k: sums[k][2] / denom for k in Ks},
        sample_count=used,
        skipped_empty=skipped,
    )


def _tokens(text: str) -> list:
    return text.lower().split()


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def _counts(grams):
    c = {}
    for g in grams:
        c[g] = c.get(g, 0) + 1
    return c


def bleu_n(hyp_tokens, ref_tokens, n: int) -> float:
    """Sentence BLEU up to order n: clipped precisions, brevity penalty,
    epsilon-smoothed geometric mean."""
    if not hyp_tokens:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        hg = _ngrams(hyp_tokens, k)
        rg = _counts(_ngrams(ref_tokens, k))
        total = len(hg)
        if total == 0:
            p = 0.0
        else:
            hits = 0
            hc = _counts(hg)
            for g, c in hc.items():
                hits += min(c, rg.get(g, 0))
            p = hits / total
        log_sum += np.log(max(p, EPS_BLEU))
    bp = 1.0 if len(hyp_tokens) >= len(ref_tokens) else \
        float(np.exp(1.0 - len(ref_tokens) / len(hyp_tokens)))
    return bp * float(np.exp(log_sum / n))


def _overlap_f1(hyp_grams, ref_grams, hyp_tokens, ref_tokens) -> float:
    if not hyp_grams and not ref_grams:
        return 1.0 if hyp_tokens == ref_tokens else 0.0
    if not hyp_grams or not ref_grams:
        return 0.0
    rc = _counts(ref_grams)
    hits = 0
    for g, c in _counts(hyp_grams).items():
        hits += min(c, rc.get(g, 0))
    p = hits / len(hyp_grams)
    r = hits / len(ref_grams)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def rouge_2(hyp_tokens, ref_tokens) -> float:
    return _overlap_f1(_ngrams(hyp_tokens, 2), _ngrams(ref_tokens, 2),
                       hyp_tokens, ref_tokens)


def _lcs_len(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp_tokens, ref_tokens) -> float:
    if not hyp_tokens and not ref_tokens:
        return 1.0
    if not hyp_tokens or not ref_tokens:
        return 0.0
    lcs = _lcs_len(hyp_tokens, ref_tokens)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp_tokens)
    r = lcs / len(ref_tokens)
    return 2 * p * r / (p + r)


def dist_n(all_hyp_tokens, n: int) -> float:
    """Distinct n-grams across hypotheses divided by hypothesis count."""
    if not all_hyp_tokens:
        return 0.0
    distinct = set()
    for toks in all_hyp_tokens:
        distinct.update(_ngrams(toks, n))
    return len(distinct) / len(all_hyp_tokens)


def gen_metrics(hypotheses, references) -> GenMetricsReport:
    """Corpus report: mean sentence BLEU-2/3 and ROUGE-2/L, plus DIST-2/3/4."""
    if len(hypotheses) != len(references):
        raise ShapeMismatchError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    hyp_tokens = [_tokens(h) for h in hypotheses]
    ref_tokens = [_tokens(r) for r in references]
    n_resp = len(hypotheses)
    if n_resp == 0:
        return GenMetricsReport({2: 0.0, 3: 0.0}, 0.0, 0.0,
                                {2: 0.0, 3: 0.0, 4: 0.0}, 0)
    bleu = {n: float(np.mean([bleu_n(h, r, n)
                              for h, r in zip(hyp_tokens, ref_tokens)]))
            for n in (2, 3)}
    r2 = float(np.mean([rouge_2(h, r) for h, r in zip(hyp_tokens, ref_tokens)]))
    rl = float(np.mean([rouge_l(h, r) for h, r in zip(hyp_tokens, ref_tokens)]))
    dist = {n: dist_n(hyp_tokens, n) for n in (2, 3, 4)}
    return GenMetricsReport(bleu, r2, rl, dist, n_resp)


def popularity_baseline(train_conversations, all_items) -> list:
    """Items by descending target frequency in training, ties by id;
    unseen items follow all seen ones."""
    counts = {int(i): 0 for i in all_items}
    for conv in train_conversations:
        for t in conv.target_items:
            if t in counts:
                counts[t] += 1
    return sorted(counts, key=lambda i: (-counts[i], i))


def items_by_score(item_ids, scores) -> list:
    """Descending-score ranking with ascending-id tie-break."""
    if len(item_ids) != len(scores):
        raise ShapeMismatchError("ids and scores must align")
    if len(item_ids) == 0:
        raise EmptyInputError("cannot rank an empty candidate set")
    order = sorted(range(len(item_ids)),
                   key=lambda j: (-float(scores[j]), int(item_ids[j])))
    return [int(item_ids[j]) for j in order]
