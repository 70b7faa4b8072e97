"""Model assembly: parameter trees, seeding contracts, the frozen-feature
cache, and checkpoint array loading."""

import numpy as np
import pytest

from starcrs.config import RunConfig
from starcrs.errors import CheckpointError, ShapeMismatchError
from starcrs.model import Model
from starcrs.conv import RetrievalIndex


def build(tiny_corpus, vocab, cache, seed=0, frozen_seed=1234):
    _, _, graph, descs = tiny_corpus
    cfg = RunConfig(seed=seed, frozen_seed=frozen_seed)
    return Model(cfg, vocab, graph, descs, cache)


class TestSeeding:
    def test_same_seed_bit_identical(self, tiny_corpus, tiny_vocab,
                                     tiny_model):
        a = build(tiny_corpus, tiny_vocab, tiny_model.cache)
        b = build(tiny_corpus, tiny_vocab, tiny_model.cache)
        arrays_a, arrays_b = a.all_named_arrays(), b.all_named_arrays()
        assert set(arrays_a) == set(arrays_b)
        for name in arrays_a:
            np.testing.assert_array_equal(arrays_a[name], arrays_b[name],
                                          err_msg=name)

    def test_training_seed_leaves_frozen_encoders_alone(self, tiny_corpus,
                                                        tiny_vocab,
                                                        tiny_model):
        a = build(tiny_corpus, tiny_vocab, tiny_model.cache, seed=0)
        b = build(tiny_corpus, tiny_vocab, tiny_model.cache, seed=9)
        fa, fb = a.all_named_arrays(), b.all_named_arrays()
        diffs = [n for n in fa if fa[n].shape == fb[n].shape
                 and np.abs(fa[n] - fb[n]).max() > 0]
        assert diffs
        assert all(not n.startswith("frozen.") for n in diffs)

    def test_frozen_seed_changes_encoders_only(self, tiny_corpus, tiny_vocab,
                                               tiny_model):
        a = build(tiny_corpus, tiny_vocab, None, frozen_seed=1234)
        b = build(tiny_corpus, tiny_vocab, None, frozen_seed=99)
        fa, fb = a.all_named_arrays(), b.all_named_arrays()
        frozen_diff = [n for n in fa if n.startswith("frozen.")
                       and np.abs(fa[n] - fb[n]).max() > 0]
        train_diff = [n for n in fa if n.startswith("train.")
                      and np.abs(fa[n] - fb[n]).max() > 0]
        assert frozen_diff and not train_diff


class TestParameterTrees:
    def test_train_and_frozen_names_disjoint(self, tiny_model):
        arrays = tiny_model.all_named_arrays()
        train = {n for n in arrays if n.startswith("train.")}
        frozen = {n for n in arrays if n.startswith("frozen.")}
        assert train | frozen == set(arrays)
        assert train and frozen

    def test_conv_groups_subset_of_trainable(self, tiny_model):
        all_names = {n for n, _ in tiny_model.trainable_params()}
        conv_names = {n for n, _ in tiny_model.conv_trainable_params()}
        assert conv_names < all_names
        assert "prompts.conv" in conv_names
        assert "backbone.head.W" in conv_names
        assert "prompts.rec" not in conv_names
        assert "backbone.tok" not in conv_names
        assert not any(n.startswith("rgcn.") or n.startswith("fusion.")
                       for n in conv_names)

    def test_conv_groups_share_tensors_with_full_tree(self, tiny_model):
        full = dict(tiny_model.trainable_params())
        for name, t in tiny_model.conv_trainable_params():
            assert full[name] is t


class TestFeatureCache:
    def test_entity_features_shapes_and_centering(self, tiny_model):
        cache = tiny_model.cache
        n = tiny_model.graph.n_entities
        txt = cache.entity_text_raw()
        vis = cache.entity_vision_raw()
        assert txt.shape == (n, cache.text_enc.d_txt)
        assert vis.shape == (n, cache.vis_enc.d_vis)
        np.testing.assert_allclose(txt.mean(axis=0), 0.0, atol=1e-4)
        np.testing.assert_allclose(vis.mean(axis=0), 0.0, atol=1e-4)

    def test_cache_arrays_are_memoized(self, tiny_model):
        cache = tiny_model.cache
        assert cache.entity_text_raw() is cache.entity_text_raw()
        assert cache.entity_vision_raw() is cache.entity_vision_raw()

    def test_shared_cache_instance(self, tiny_corpus, tiny_vocab, tiny_model):
        m2 = build(tiny_corpus, tiny_vocab, tiny_model.cache, seed=4)
        assert m2.cache is tiny_model.cache

    def test_context_tokens_budget(self, tiny_model, tiny_splits):
        train, _, _ = tiny_splits
        c = train[0]
        short = tiny_model.cache.context_tokens(c.id, c.context_turns(), 16)
        full = tiny_model.cache.context_tokens(c.id, c.context_turns(),
                                               10_000)
        assert len(short) == 16
        assert short == full[-16:]

    def test_dialogue_rows_deterministic(self, tiny_model, tiny_splits):
        train, _, _ = tiny_splits
        c = train[0]
        a = tiny_model.cache.dialogue_rows(c.id, c.turns)
        b = tiny_model.cache.dialogue_rows(c.id, c.turns)
        assert a is b
        assert a.shape[1] == tiny_model.cache.vis_enc.d_vis


class TestLoadNamedArrays:
    def test_round_trip(self, tiny_corpus, tiny_vocab, tiny_model):
        a = build(tiny_corpus, tiny_vocab, tiny_model.cache, seed=2)
        b = build(tiny_corpus, tiny_vocab, tiny_model.cache, seed=7)
        b.load_named_arrays(a.all_named_arrays())
        for name, arr in a.all_named_arrays().items():
            np.testing.assert_array_equal(
                arr, b.all_named_arrays()[name], err_msg=name)

    def test_missing_tensor_rejected(self, tiny_corpus, tiny_vocab,
                                     tiny_model):
        m = build(tiny_corpus, tiny_vocab, tiny_model.cache)
        arrays = m.all_named_arrays()
        arrays.pop("train.prompts.rec")
        with pytest.raises(CheckpointError):
            m.load_named_arrays(arrays)

    def test_wrong_shape_rejected(self, tiny_corpus, tiny_vocab, tiny_model):
        m = build(tiny_corpus, tiny_vocab, tiny_model.cache)
        arrays = m.all_named_arrays()
        arrays["train.prompts.rec"] = np.zeros((1, 1), dtype=np.float32)
        with pytest.raises(CheckpointError):
            m.load_named_arrays(arrays)

    def test_extra_tensor_rejected(self, tiny_corpus, tiny_vocab, tiny_model):
        m = build(tiny_corpus, tiny_vocab, tiny_model.cache)
        arrays = m.all_named_arrays()
        arrays["train.mystery"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(CheckpointError):
            m.load_named_arrays(arrays)


class TestRetrievalAttachment:
    def test_unknown_ids_rejected(self, tiny_corpus, tiny_vocab, tiny_model):
        _, convs, _, _ = tiny_corpus
        m = build(tiny_corpus, tiny_vocab, tiny_model.cache)
        bad = RetrievalIndex(np.zeros((1, 8), dtype=np.float32), ["ghost"])
        with pytest.raises(ShapeMismatchError):
            m.attach_retrieval(bad, convs)
