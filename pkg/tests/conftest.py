"""Shared fixtures: a small synthetic corpus and models built on it.

Session scope keeps the frozen-feature cache warm across files; tests that
mutate parameters must either use fresh_model or restore what they touch.
"""

import numpy as np
import pytest

from starcrs.config import RunConfig
from starcrs.corpus import SynthConfig, generate_synthetic, split_corpus
from starcrs.model import Model
from starcrs.optim import AdamState
from starcrs.train import build_retrieval_index, corpus_vocabulary


TINY = dict(num_items=16, num_genres=4, num_actors=4,
            num_conversations=30, seed=5)


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = SynthConfig(**TINY)
    convs, graph, descs = generate_synthetic(cfg)
    return cfg, convs, graph, descs


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    _, convs, _, descs = tiny_corpus
    return corpus_vocabulary(convs, descs, RunConfig().vocab_max)


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus, tiny_vocab):
    """Untrained model with retrieval attached; treat as read-only."""
    _, convs, graph, descs = tiny_corpus
    model = Model(RunConfig(seed=0), tiny_vocab, graph, descs, None)
    train, _, _ = split_corpus(convs)
    model.attach_retrieval(build_retrieval_index(train, model.cache), convs)
    return model


@pytest.fixture()
def fresh_model(tiny_corpus, tiny_vocab, tiny_model):
    """Per-test model sharing the session feature cache; safe to train."""
    _, convs, graph, descs = tiny_corpus
    model = Model(RunConfig(seed=0), tiny_vocab, graph, descs,
                  tiny_model.cache)
    train, _, _ = split_corpus(convs)
    model.attach_retrieval(build_retrieval_index(train, model.cache), convs)
    return model


@pytest.fixture(scope="session")
def trained_tiny(tiny_corpus, tiny_vocab, tiny_model):
    """A briefly trained model for decode/eval plumbing; read-only."""
    from starcrs import conv as cv
    from starcrs import rec

    _, convs, graph, descs = tiny_corpus
    model = Model(RunConfig(seed=1), tiny_vocab, graph, descs,
                  tiny_model.cache)
    train, _, _ = split_corpus(convs)
    model.attach_retrieval(build_retrieval_index(train, model.cache), convs)
    state = AdamState(lr=3e-3)
    for start in range(0, len(train), 8):
        rec.pretrain_step(model, train[start:start + 8], state)
    state = AdamState(lr=3e-3)
    for start in range(0, len(train), 8):
        rec.finetune_step(model, train[start:start + 8], state)
    state = AdamState(lr=5e-3)
    for start in range(0, len(train), 8):
        cv.conv_step(model, train[start:start + 8], state)
    return model


@pytest.fixture()
def tiny_splits(tiny_corpus):
    _, convs, _, _ = tiny_corpus
    return split_corpus(convs)


@pytest.fixture(scope="session")
def corpus_files(tmp_path_factory, tiny_corpus):
    """The small corpus serialized to disk for path-based configs."""
    from starcrs.corpus import save_corpus
    from starcrs.kg import save_descriptions, save_triples

    _, convs, graph, descs = tiny_corpus
    d = tmp_path_factory.mktemp("corpus")
    save_corpus(convs, d / "corpus.jsonl")
    save_triples(graph, d / "triples.tsv")
    save_descriptions(descs, d / "descriptions.jsonl")
    return d


def file_config(corpus_dir, **kw):
    kw.setdefault("epochs_stage1", 1)
    kw.setdefault("epochs_stage2", 1)
    kw.setdefault("epochs_conv", 1)
    return RunConfig(corpus_path=str(corpus_dir / "corpus.jsonl"),
                     triples_path=str(corpus_dir / "triples.tsv"),
                     descriptions_path=str(corpus_dir / "descriptions.jsonl"),
                     **kw)


@pytest.fixture(scope="session")
def trained_run(corpus_files, tmp_path_factory, tiny_model):
    """(config, cmd_train result) for a short file-based training run."""
    from starcrs.train import cmd_train

    out = tmp_path_factory.mktemp("run")
    cfg = file_config(corpus_files, seed=3, out_dir=str(out))
    return cfg, cmd_train(cfg, cache=tiny_model.cache)
