"""Training driver: the two recommendation stages, response-generation
training, retrieval index construction, and checkpoint round-trips."""

from __future__ import annotations

import json
import logging
import os

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .conv import RetrievalIndex, build_retrieval_index, conv_step
from .corpus import (SynthConfig, corpus_texts, generate_synthetic,
                     load_corpus, split_corpus)
from .encoders import Vocabulary, build_vocabulary
from .errors import CheckpointError
from .kg import load_descriptions, load_triples
from .model import FeatureCache, Model
from .optim import AdamState
from .rec import finetune_step, pretrain_step

log = logging.getLogger(__name__)

# distinct shuffle streams per stage, all derived from the run seed
_STAGE_SALT = {"pretrain": 11, "finetune": 23, "conv": 37}


def resolve_corpus(cfg: RunConfig):
    """(conversations, graph, descriptions) from cfg paths, or the default
    synthetic corpus when no paths are set."""
    if cfg.corpus_path:
        graph = load_triples(cfg.triples_path)
        descs = load_descriptions(cfg.descriptions_path)
        convs = load_corpus(cfg.corpus_path, graph)
        return convs, graph, descs
    return generate_synthetic(SynthConfig())


def corpus_vocabulary(convs, descriptions, vocab_max: int) -> Vocabulary:
    return build_vocabulary(corpus_texts(convs, descriptions), vocab_max)


def _batches(convs, batch_size: int, order) -> list:
    return [[convs[i] for i in order[s: s + batch_size]]
            for s in range(0, len(order), batch_size)]


def run_stage(model, stage: str, train_convs, epochs: int, step_fn,
              emit) -> None:
    """Epochs of shuffled mini-batches through one training stage."""
    cfg = model.cfg
    rng = np.random.default_rng([cfg.seed, _STAGE_SALT[stage]])
    lr = cfg.conv_lr if stage == "conv" and cfg.conv_lr > 0 else cfg.lr
    state = AdamState(lr=lr, weight_decay=cfg.weight_decay)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(train_convs))
        for batch in _batches(train_convs, cfg.batch_size, order):
            out = step_fn(model, batch, state)
            emit({"stage": stage, "epoch": epoch, "step": step, **out})
            step += 1


def train_model(model, convs, emit=None) -> list:
    """Full schedule on the training split: entity alignment, item
    prediction, then response generation. Returns the per-step log."""
    history = []

    def _emit(entry):
        history.append(entry)
        if emit is not None:
            emit(entry)

    train_convs, _, _ = split_corpus(convs)
    cfg = model.cfg
    run_stage(model, "pretrain", train_convs, cfg.epochs_stage1,
              pretrain_step, _emit)
    run_stage(model, "finetune", train_convs, cfg.epochs_stage2,
              finetune_step, _emit)
    model.attach_retrieval(build_retrieval_index(train_convs, model.cache),
                           convs)
    run_stage(model, "conv", train_convs, cfg.epochs_conv, conv_step, _emit)
    return history


def retrain_conv_stage(trained_model, convs, overrides: dict,
                       emit=None) -> Model:
    """Generation-stage variant of an already trained model.

    Conversation-side switches (retrieval and current-visual paths) only
    influence the generation stage, and the generation-side parameter
    groups receive no updates before it, so a variant is reproduced by
    cloning the ranking-side state, applying the switches, and re-running
    the generation stage alone."""
    import dataclasses

    cfg = dataclasses.replace(trained_model.cfg, **(overrides or {}))
    cfg.validate()
    clone = Model(cfg, trained_model.vocab, trained_model.graph,
                  trained_model.descriptions, trained_model.cache)
    conv_names = {n for n, _ in clone.conv_trainable_params()}
    source = dict(trained_model.trainable_params())
    for name, t in clone.trainable_params():
        if name not in conv_names:
            t.data = source[name].data.copy()
    train_convs, _, _ = split_corpus(convs)
    if trained_model.retrieval is not None:
        clone.attach_retrieval(trained_model.retrieval, convs)
    run_stage(clone, "conv", train_convs, cfg.epochs_conv, conv_step,
              emit or (lambda entry: None))
    return clone


def save_model(model, path, stage: str = "full") -> None:
    """Checkpoint: all parameters, the retrieval index, and the vocabulary."""
    tensors = model.all_named_arrays()
    meta = {"vocab": list(model.vocab.id_to_token)}
    if model.retrieval is not None:
        tensors["retrieval.vectors"] = model.retrieval.vectors
        meta["retrieval_ids"] = list(model.retrieval.ids)
    save_checkpoint(path, tensors, stage, model.cfg, meta)


def load_model(path, convs, graph, descriptions, cache: FeatureCache = None,
               overrides: dict = None):
    """Rebuild a Model from a checkpoint against a compatible corpus.

    ``overrides`` may flip ablation switches or decoding settings; shape
    parameters must match the checkpoint. The corpus must reproduce the
    checkpointed vocabulary exactly.
    """
    ckpt = load_checkpoint(path)
    cfg = ckpt.config
    if overrides:
        for key, val in overrides.items():
            if not hasattr(cfg, key):
                raise CheckpointError(f"unknown config field {key!r}")
            setattr(cfg, key, val)
        cfg.validate()
    saved_vocab = ckpt.meta.get("vocab")
    if saved_vocab is None:
        raise CheckpointError(f"{path}: checkpoint has no vocabulary")
    fresh = corpus_vocabulary(convs, descriptions, cfg.vocab_max)
    if list(fresh.id_to_token) != list(saved_vocab):
        raise CheckpointError(
            f"{path}: corpus vocabulary does not match the checkpoint "
            f"({len(fresh.id_to_token)} vs {len(saved_vocab)} tokens or "
            f"different contents)")
    model = Model(cfg, Vocabulary(list(saved_vocab)), graph, descriptions,
                  cache)
    arrays = dict(ckpt.tensors)
    vectors = arrays.pop("retrieval.vectors", None)
    model.load_named_arrays(arrays)
    if vectors is not None:
        ids = ckpt.meta.get("retrieval_ids", [])
        model.attach_retrieval(
            RetrievalIndex(vectors.astype(np.float32), list(ids)), convs)
    return model, ckpt


def checkpoint_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.out_dir, f"model_seed{cfg.seed}.ckpt")


def log_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.out_dir, f"train_seed{cfg.seed}.jsonl")


def cmd_train(cfg: RunConfig, cache: FeatureCache = None) -> dict:
    """Train with the given config; write seed-stamped checkpoint and a
    JSON-lines per-step loss log. Returns artifact paths and final losses."""
    cfg.validate()
    convs, graph, descs = resolve_corpus(cfg)
    vocab = corpus_vocabulary(convs, descs, cfg.vocab_max)
    model = Model(cfg, vocab, graph, descs, cache)
    os.makedirs(cfg.out_dir, exist_ok=True)
    losses = {}
    with open(log_path(cfg), "w", encoding="utf-8") as fh:
        def emit(entry):
            fh.write(json.dumps(entry) + "\n")
            losses[entry["stage"]] = entry["loss"]

        train_model(model, convs, emit)
    ckpt = checkpoint_path(cfg)
    save_model(model, ckpt, stage="full")
    log.info("checkpoint written to %s", ckpt)
    return {"checkpoint": ckpt, "log": log_path(cfg),
            "final_losses": losses, "model": model}
