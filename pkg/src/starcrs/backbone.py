"""Small decoder-only language model used for recommendation and response
generation. Callers assemble the full prompt as embedding rows; positional
embeddings and the causal mask are applied here."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContextOverflowError, ShapeMismatchError
from .nn import (AttentionConfig, init_linear, init_transformer_layer, linear,
                 transformer_layer)


class BackboneLM:
    def __init__(self, d, n_layers, n_heads, max_pos, vocab_size, tree):
        self.d = d
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_pos = max_pos
        self.vocab_size = vocab_size
        self.cfg = AttentionConfig(model_dim=d, num_heads=n_heads)
        self.tree = tree


def init_backbone(rng, vocab_size, d=32, n_layers=2, n_heads=4, max_pos=512,
                  dtype=np.float32) -> BackboneLM:
    scale = 1.0 / np.sqrt(d)
    tree = {
        "tok": Tensor(rng.normal(0.0, scale, size=(vocab_size, d)).astype(dtype),
                      requires_grad=True),
        "pos": Tensor(rng.normal(0.0, scale, size=(max_pos, d)).astype(dtype),
                      requires_grad=True),
        "layers": [init_transformer_layer(rng, d, dtype=dtype)
                   for _ in range(n_layers)],
        "head": init_linear(rng, d, vocab_size, dtype=dtype),
    }
    return BackboneLM(d, n_layers, n_heads, max_pos, vocab_size, tree)


def embed_tokens(lm: BackboneLM, token_ids) -> Tensor:
    """Token embedding rows for a list of vocabulary ids, shape (m, d)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeMismatchError(f"token ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= lm.vocab_size):
        raise ShapeMismatchError(
            f"token id out of range for vocab of {lm.vocab_size}")
    return ad.embedding(lm.tree["tok"], ids)


def forward_hidden(lm: BackboneLM, embeds: Tensor) -> Tensor:
    """Causal transformer stack over pre-assembled embedding rows (L, d)."""
    if embeds.data.ndim != 2 or embeds.data.shape[1] != lm.d:
        raise ShapeMismatchError(
            f"expected (L, {lm.d}) embedding rows, got {embeds.data.shape}")
    L = embeds.data.shape[0]
    if L > lm.max_pos:
        raise ContextOverflowError(
            f"prompt of {L} rows exceeds position budget {lm.max_pos}")
    x = embeds + lm.tree["pos"][:L]
    for layer in lm.tree["layers"]:
        x = transformer_layer(x, layer, lm.cfg, causal=True)
    return x


def logits(lm: BackboneLM, hidden: Tensor) -> Tensor:
    return linear(hidden, lm.tree["head"])
