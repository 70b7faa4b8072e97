"""Vocabulary, tokenization, and the frozen text/vision encoders."""

import numpy as np
import pytest

from starcrs import encoders as enc
from starcrs import nn
from starcrs.errors import ConfigError, EmptyInputError, ParseError, ShapeMismatchError
from starcrs.render import render_text


def small_vocab():
    return enc.build_vocabulary(["the cat sat on the mat", "the dog sat"], vocab_max=12)


def test_vocabulary_reserved_ids_and_ranking():
    v = small_vocab()
    assert v.id_to_token[:5] == list(enc.RESERVED)
    assert v.token_to_id["<pad>"] == enc.PAD == 0
    assert v.token_to_id["<unk>"] == enc.UNK == 1
    # "the" (3) ranks before "sat" (2); ties break alphabetically
    assert v.token_to_id["the"] == 5
    assert v.token_to_id["sat"] == 6
    assert v.size <= 12


def test_vocab_max_truncates_and_validates():
    v = enc.build_vocabulary(["a b c d e f g h i j"], vocab_max=8)
    assert v.size == 8
    with pytest.raises(ConfigError):
        enc.build_vocabulary(["x"], vocab_max=5)


def test_tokenize_contracts():
    v = small_vocab()
    assert enc.tokenize("", v) == []
    two = enc.tokenize("Hello HELLO", v)
    assert len(two) == 2 and two[0] == two[1]
    assert enc.tokenize("zebra", v) == [enc.UNK]
    # punctuation splits words
    assert enc.tokenize("cat,dog", v) == enc.tokenize("cat dog", v)


def test_vocab_jsonl_roundtrip(tmp_path):
    v = small_vocab()
    path = tmp_path / "vocab.jsonl"
    v.save_jsonl(path)
    v2 = enc.Vocabulary.load_jsonl(path)
    assert v2.id_to_token == v.id_to_token
    path.write_text('{"token": "<pad>", "id": 0}\n{"bad json\n')
    with pytest.raises(ParseError):
        enc.Vocabulary.load_jsonl(path)


@pytest.fixture(scope="module")
def text_params():
    return enc.init_text_encoder(np.random.default_rng(0), vocab_size=32, d_txt=48,
                                 max_len=256, n_layers=2, n_heads=4)


@pytest.fixture(scope="module")
def vis_params():
    return enc.init_vision_encoder(np.random.default_rng(1))


def test_encode_text_shapes_and_tail_truncation(text_params):
    one = enc.encode_text([7], text_params)
    assert one.shape == (1, 48)
    long_ids = list(np.random.default_rng(2).integers(5, 32, size=600))
    out = enc.encode_text(long_ids, text_params)
    assert out.shape == (256, 48)
    tail = enc.encode_text(long_ids[-256:], text_params)
    np.testing.assert_array_equal(out.data, tail.data)


def test_encode_text_deterministic_and_position_sensitive(text_params):
    ids = [5, 9, 9, 12, 30]
    a = enc.encode_text(ids, text_params)
    b = enc.encode_text(ids, text_params)
    assert a.data.tobytes() == b.data.tobytes()
    swapped = enc.encode_text([9, 5, 9, 12, 30], text_params)
    assert not np.allclose(a.data, swapped.data)


def test_encode_text_empty_and_frozen(text_params):
    assert enc.encode_text([], text_params).shape == (0, 48)
    out = enc.encode_text([3, 4], text_params)
    assert not out.requires_grad  # frozen params build no tape
    for _, p in nn.iter_params(text_params.tree):
        assert not p.requires_grad


def test_encode_pages_shapes(vis_params):
    one = render_text("hello screen")
    out = enc.encode_pages(one, vis_params)
    assert out.shape == (64, 40)
    three = render_text("y" * 600)
    assert three.n_pages == 3
    assert enc.encode_pages(three, vis_params).shape == (192, 40)


def test_encode_pages_distinguishes_blank_from_glyph(vis_params):
    blank = enc.encode_pages(render_text(""), vis_params)
    glyph = enc.encode_pages(render_text("A"), vis_params)
    assert not np.allclose(blank.data, glyph.data)


def test_encode_pages_deterministic(vis_params):
    pages = render_text("determinism check 123")
    a = enc.encode_pages(pages, vis_params)
    b = enc.encode_pages(pages, vis_params)
    assert a.data.tobytes() == b.data.tobytes()


def test_patchify_row_major_and_divisibility():
    page = np.arange(16, dtype=np.float32).reshape(4, 4)
    tiles = enc.patchify(page, 2)
    assert tiles.shape == (4, 4)
    np.testing.assert_array_equal(tiles[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(tiles[1], [2, 3, 6, 7])
    with pytest.raises(ShapeMismatchError):
        enc.patchify(np.zeros((5, 4), dtype=np.float32), 2)


def test_avg_pool_contracts():
    from starcrs.autodiff import Tensor

    v = np.random.default_rng(3).normal(size=(1, 8))
    np.testing.assert_allclose(enc.avg_pool(Tensor(v)).data, v[0], atol=1e-7)
    pair = np.vstack([v, -v])
    np.testing.assert_allclose(enc.avg_pool(Tensor(pair)).data, np.zeros(8), atol=1e-7)
    x = np.random.default_rng(4).normal(size=(5, 8))
    np.testing.assert_allclose(enc.avg_pool(Tensor(x)).data, x.mean(axis=0), atol=1e-9)
    perm = x[np.random.default_rng(5).permutation(5)]
    np.testing.assert_allclose(enc.avg_pool(Tensor(perm)).data,
                               enc.avg_pool(Tensor(x)).data, atol=1e-6)
    with pytest.raises(EmptyInputError):
        enc.avg_pool(Tensor(np.zeros((0, 8))))
