"""Parameter sweeps: seed-replicated train/eval grids over a single
tunable, emitted as CSV for curve plotting."""

from __future__ import annotations

import csv
import dataclasses
import logging
import os

import numpy as np

from .config import RunConfig
from .errors import ConfigError
from .evaluate import decoding_from, evaluate_gen, evaluate_rank, pick_split
from .model import FeatureCache
from .train import resolve_corpus, corpus_vocabulary, train_model
from .model import Model

log = logging.getLogger(__name__)

SWEEPABLE = ("alpha", "beta", "gamma", "k_sim")
# generation metrics only move for conversation-side parameters
_GEN_PARAMS = ("gamma", "k_sim")


def _one_run(cfg: RunConfig, convs, graph, descs, vocab, cache,
             eval_limit: int | None, want_gen: bool) -> dict:
    model = Model(cfg, vocab, graph, descs, cache)
    train_model(model, convs)
    evals = pick_split(convs, "test")
    if eval_limit:
        evals = evals[:eval_limit]
    rank_rep, _ = evaluate_rank(model, evals)
    row = {"recall@10": rank_rep.recall[10]}
    if want_gen:
        gen_rep, _ = evaluate_gen(model, evals, decoding_from(cfg))
        row["bleu_2"] = gen_rep.bleu[2]
    return row


def sweep_param(base_cfg: RunConfig, param: str, values, seeds,
                cache: FeatureCache = None,
                eval_limit: int | None = None) -> list:
    """Grid of (value, seed) runs; returns per-run and per-value mean rows."""
    if param not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {param!r}; choose from {SWEEPABLE}")
    convs, graph, descs = resolve_corpus(base_cfg)
    vocab = corpus_vocabulary(convs, descs, base_cfg.vocab_max)
    want_gen = param in _GEN_PARAMS
    rows = []
    for value in values:
        per_seed = []
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, seed=int(seed))
            setattr(cfg, param, type(getattr(cfg, param))(value))
            cfg.validate()
            out = _one_run(cfg, convs, graph, descs, vocab, cache,
                           eval_limit, want_gen)
            rows.append({"param": param, "value": value, "seed": seed, **out})
            per_seed.append(out)
            log.info("sweep %s=%s seed=%s -> %s", param, value, seed, out)
        mean = {k: float(np.mean([r[k] for r in per_seed]))
                for k in per_seed[0]}
        rows.append({"param": param, "value": value, "seed": "mean", **mean})
    return rows


def write_csv(rows, path) -> str:
    fields = ["param", "value", "seed", "recall@10", "bleu_2"]
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({f: r.get(f, "") for f in fields})
    return path


def cmd_sweep(base_cfg: RunConfig, param: str, values, seeds, out_csv: str,
              cache: FeatureCache = None,
              eval_limit: int | None = None) -> dict:
    rows = sweep_param(base_cfg, param, values, seeds, cache, eval_limit)
    path = write_csv(rows, out_csv)
    means = {r["value"]: r for r in rows if r["seed"] == "mean"}
    return {"csv": path, "rows": rows, "means": means}
