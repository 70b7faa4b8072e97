"""Evaluation harness: ranking and generation reports for a checkpoint,
with ablation switches applied at load time and a popularity baseline."""

from __future__ import annotations

import json
import logging

from .config import RunConfig
from .conv import DecodingConfig, generate_response
from .corpus import split_corpus
from .errors import ConfigError
from .metrics import (GenMetricsReport, RankMetricsReport, gen_metrics,
                      popularity_baseline, rank_metrics)
from .model import FeatureCache
from .rec import entity_tables, rank_all_items
from .train import load_model, resolve_corpus

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def pick_split(convs, split: str):
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}, expected one of {SPLITS}")
    return split_corpus(convs)[SPLITS.index(split)]


def evaluate_rank(model, convs, ks=(1, 10, 50)) -> tuple:
    """Full-ranking metrics over a conversation list."""
    tables = entity_tables(model)
    rankings, targets = [], []
    for c in convs:
        rankings.append(rank_all_items(model, c.id, c.context_turns(), tables))
        targets.append(list(c.target_items))
    return rank_metrics(rankings, targets, ks), rankings


def evaluate_gen(model, convs, decode: DecodingConfig = None,
                 echo_references: bool = False) -> tuple:
    """Generation metrics against reference responses.

    ``echo_references`` scores the references against themselves, a
    plumbing check that must produce perfect overlap scores.
    """
    hyps, refs, skipped = [], [], 0
    for c in convs:
        ref = c.response_text()
        if not ref.strip():
            skipped += 1
            continue
        refs.append(ref)
        if echo_references:
            hyps.append(ref)
        else:
            hyps.append(generate_response(model, c.id, c.context_turns(),
                                          decode))
    if skipped:
        log.info("%d conversations without references skipped", skipped)
    return gen_metrics(hyps, refs), list(zip(hyps, refs))


def popularity_rank_report(convs, item_ids, split: str = "test",
                           ks=(1, 10, 50)) -> RankMetricsReport:
    """Frequency-ranking baseline scored on a split of the same corpus."""
    train_convs = pick_split(convs, "train")
    ranking = popularity_baseline(train_convs, item_ids)
    evals = pick_split(convs, split)
    return rank_metrics([list(ranking) for _ in evals],
                        [list(c.target_items) for c in evals], ks)


def report_table(rank: RankMetricsReport, gen: GenMetricsReport) -> str:
    return rank.to_table() + "\n\n" + gen.to_table()


def decoding_from(cfg: RunConfig) -> DecodingConfig:
    return DecodingConfig(strategy=cfg.decode,
                          max_new_tokens=cfg.max_new_tokens,
                          k=cfg.top_k, seed=cfg.seed)


def cmd_eval(checkpoint: str, split: str = "test", ks=(1, 10, 50),
             overrides: dict = None, echo_references: bool = False,
             cache: FeatureCache = None, skip_gen: bool = False) -> dict:
    """Rank + generation reports for a checkpoint on one corpus split."""
    from .checkpoint import load_checkpoint

    cfg = load_checkpoint(checkpoint).config
    convs, graph, descs = resolve_corpus(cfg)
    model, _ = load_model(checkpoint, convs, graph, descs, cache=cache,
                          overrides=overrides)
    evals = pick_split(convs, split)
    rank_rep, _ = evaluate_rank(model, evals, ks)
    if skip_gen:
        gen_rep = None
    else:
        gen_rep, _ = evaluate_gen(model, evals, decoding_from(model.cfg),
                                  echo_references=echo_references)
    out = {
        "split": split,
        "rank": rank_rep.to_dict(),
        "gen": gen_rep.to_dict() if gen_rep else None,
        "table": (report_table(rank_rep, gen_rep) if gen_rep
                  else rank_rep.to_table()),
    }
    out["json"] = json.dumps({"split": split, "rank": out["rank"],
                              "gen": out["gen"]}, indent=2, sort_keys=True)
    return out
