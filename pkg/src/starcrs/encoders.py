"""Frozen toy encoders: word-level text transformer and patch vision transformer.

Both stand in for large pretrained encoders, so they are randomly initialized
once and frozen by default; with frozen parameters the forward passes build
no autodiff tape and behave as pure functions. Dimensions are deliberately
unequal (d_txt=48, d_vis=40) so the downstream projection layers do real work.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Tensor, concat, embedding
from .errors import ConfigError, EmptyInputError, ParseError, ShapeMismatchError
from .render import ScreenPageSet

PAD, UNK, BOS, EOS, SEP = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>", "<sep>")

_WORD = re.compile(r"[a-z0-9]+")


@dataclass
class Vocabulary:
    id_to_token: list
    token_to_id: dict = field(default_factory=dict)

    def __post_init__(self):
        if list(self.id_to_token[:5]) != list(RESERVED):
            raise ConfigError("vocabulary must start with the reserved tokens")
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("vocabulary has duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(json.dumps({"token": tok, "id": i}) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "Vocabulary":
        rows = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    rows[int(rec["id"])] = rec["token"]
                except (ValueError, KeyError) as exc:
                    raise ParseError(str(path), line_no, f"bad vocabulary row: {exc}")
        if sorted(rows) != list(range(len(rows))):
            raise ParseError(str(path), 0, "vocabulary ids are not dense from 0")
        return cls([rows[i] for i in range(len(rows))])


def words_of(text: str) -> list:
    return _WORD.findall(text.lower())


def build_vocabulary(texts, vocab_max: int = 512) -> Vocabulary:
    """Frequency-ranked word vocabulary; ties break lexicographically."""
    if vocab_max <= len(RESERVED):
        raise ConfigError(f"vocab_max {vocab_max} leaves no room for real tokens")
    counts = {}
    for text in texts:
        for w in words_of(text):
            counts[w] = counts.get(w, 0) + 1
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    keep = ranked[: vocab_max - len(RESERVED)]
    return Vocabulary(list(RESERVED) + keep)


def tokenize(text: str, vocab: Vocabulary) -> list:
    """Word ids for a text; unknown words map to <unk>, empty text to []."""
    return [vocab.token_to_id.get(w, UNK) for w in words_of(text)]


@dataclass
class TextEncoderParams:
    d_txt: int
    max_len: int
    cfg: nn.AttentionConfig
    tree: dict
    frozen: bool = True


@dataclass
class VisionEncoderParams:
    d_vis: int
    patch_size: int
    cfg: nn.AttentionConfig
    tree: dict
    frozen: bool = True


def _freeze(tree) -> None:
    for _, p in nn.iter_params(tree):
        p.requires_grad = False


def init_text_encoder(rng: np.random.Generator, vocab_size: int, d_txt: int = 48,
                      max_len: int = 256, n_layers: int = 2, n_heads: int = 4,
                      frozen: bool = True, dtype=np.float32) -> TextEncoderParams:
    tree = {
        "emb": Tensor(rng.normal(size=(vocab_size, d_txt)).astype(dtype), requires_grad=True),
        "pos": Tensor(rng.normal(size=(max_len, d_txt)).astype(dtype), requires_grad=True),
        "layers": [nn.init_transformer_layer(rng, d_txt, dtype) for _ in range(n_layers)],
    }
    if frozen:
        _freeze(tree)
    cfg = nn.AttentionConfig(model_dim=d_txt, num_heads=n_heads, num_layers=n_layers)
    return TextEncoderParams(d_txt, max_len, cfg, tree, frozen)


def encode_text(tokens, params: TextEncoderParams) -> Tensor:
    """Contextual d_txt vectors for a token sequence, keeping the newest tail.

    Sequences beyond max_len are truncated from the front (oldest dropped);
    the output has one row per surviving token.
    """
    ids = list(tokens)
    if len(ids) > params.max_len:
        ids = ids[-params.max_len:]
    if not ids:
        return Tensor(np.zeros((0, params.d_txt), dtype=np.float32))
    x = embedding(params.tree["emb"], np.asarray(ids)) + params.tree["pos"][: len(ids)]
    for layer in params.tree["layers"]:
        x = nn.transformer_layer(x, layer, params.cfg)
    return x


def init_vision_encoder(rng: np.random.Generator, d_vis: int = 40, patch_size: int = 16,
                        page_px: int = 128, n_layers: int = 2, n_heads: int = 4,
                        frozen: bool = True, dtype=np.float32) -> VisionEncoderParams:
    per_side = page_px // patch_size
    tree = {
        "proj": nn.init_linear(rng, patch_size * patch_size, d_vis, dtype),
        "pos": Tensor(rng.normal(size=(per_side * per_side, d_vis)).astype(dtype),
                      requires_grad=True),
        "layers": [nn.init_transformer_layer(rng, d_vis, dtype) for _ in range(n_layers)],
    }
    if frozen:
        _freeze(tree)
    cfg = nn.AttentionConfig(model_dim=d_vis, num_heads=n_heads, num_layers=n_layers)
    return VisionEncoderParams(d_vis, patch_size, cfg, tree, frozen)


def patchify(page: np.ndarray, patch_size: int) -> np.ndarray:
    """Split an HxW page into row-major (H/ps)*(W/ps) flattened patches."""
    h, w = page.shape
    if h % patch_size or w % patch_size:
        raise ShapeMismatchError(
            f"page {h}x{w} not divisible by patch size {patch_size}")
    ph, pw = h // patch_size, w // patch_size
    tiles = page.reshape(ph, patch_size, pw, patch_size).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(tiles).reshape(ph * pw, patch_size * patch_size)


def encode_pages(pageset: ScreenPageSet, params: VisionEncoderParams) -> Tensor:
    """Visual tokens for every page, concatenated in page order.

    Each page is patch-projected, given per-page positional offsets, and run
    through the transformer independently, so token count is pages x patches.
    """
    outs = []
    for i in range(pageset.n_pages):
        patches = patchify(pageset.pages[i], params.patch_size)
        if patches.shape[0] != params.tree["pos"].shape[0]:
            raise ShapeMismatchError(
                f"page yields {patches.shape[0]} patches but encoder expects "
                f"{params.tree['pos'].shape[0]}")
        x = nn.linear(Tensor(patches), params.tree["proj"]) + params.tree["pos"]
        for layer in params.tree["layers"]:
            x = nn.transformer_layer(x, layer, params.cfg)
        outs.append(x)
    if len(outs) == 1:
        return outs[0]
    return concat(outs, axis=0)


def avg_pool(x: Tensor) -> Tensor:
    """Mean over the sequence axis; rejects empty sequences."""
    if x.shape[0] == 0:
        raise EmptyInputError("avg_pool of an empty sequence")
    return x.mean(axis=0)
