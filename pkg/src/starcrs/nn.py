"""Neural building blocks: linear maps, multi-head attention, transformer layers.

Parameters live in nested dicts of Tensors (lists allowed for layer stacks);
``iter_params`` flattens a tree into dotted names for the optimizer and the
checkpoint writer. All initializers draw from an explicit numpy Generator so
runs replay exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, attention_heads, layer_norm_rows
from .errors import ConfigError, ShapeMismatchError

NEG_INF = -1e9


@dataclass
class AttentionConfig:
    model_dim: int
    num_heads: int
    num_layers: int = 1

    def __post_init__(self):
        problems = []
        if self.model_dim <= 0:
            problems.append("model_dim must be positive")
        if self.num_heads <= 0:
            problems.append("num_heads must be positive")
        elif self.model_dim % self.num_heads != 0:
            problems.append(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.num_layers <= 0:
            problems.append("num_layers must be positive")
        if problems:
            raise ConfigError(problems)


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, dtype=np.float32) -> dict:
    w = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
    return {
        "W": Tensor(w.astype(dtype), requires_grad=True),
        "b": Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True),
    }


def linear(x: Tensor, p: dict) -> Tensor:
    return x @ p["W"] + p["b"]


def init_layer_norm(dim: int, dtype=np.float32) -> dict:
    return {
        "g": Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
        "b": Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
    }


def layer_norm(x: Tensor, p: dict) -> Tensor:
    return layer_norm_rows(x, p["g"], p["b"])


def init_attention(rng: np.random.Generator, d: int, dtype=np.float32) -> dict:
    return {
        "q": init_linear(rng, d, d, dtype),
        "k": init_linear(rng, d, d, dtype),
        "v": init_linear(rng, d, d, dtype),
        "o": init_linear(rng, d, d, dtype),
    }


def multi_head_attention(Q: Tensor, K: Tensor, V: Tensor, cfg: AttentionConfig,
                         params: dict, causal: bool = False) -> Tensor:
    """Projected scaled-dot-product attention over ``cfg.num_heads`` heads.

    Q supplies the queries; K and V are projected from their own inputs and
    must share a sequence length. Scores are scaled by 1/sqrt(head_dim)
    before the softmax, and the concatenated heads pass through a learned
    output projection. With ``causal`` set, query i only attends to keys
    j <= i (sequence lengths must then agree).
    """
    d = cfg.model_dim
    if Q.shape[1] != d or K.shape[1] != d or V.shape[1] != d:
        raise ShapeMismatchError(
            f"attention inputs must have width {d}, got {Q.shape}/{K.shape}/{V.shape}")
    if K.shape[0] != V.shape[0]:
        raise ShapeMismatchError("K and V must share sequence length")
    q = linear(Q, params["q"])
    k = linear(K, params["k"])
    v = linear(V, params["v"])
    ctx = attention_heads(q, k, v, cfg.num_heads, causal=causal)
    return linear(ctx, params["o"])


def init_ffn(rng: np.random.Generator, d: int, hidden: int, dtype=np.float32) -> dict:
    return {
        "up": init_linear(rng, d, hidden, dtype),
        "down": init_linear(rng, hidden, d, dtype),
    }


def feed_forward(x: Tensor, p: dict) -> Tensor:
    return linear(linear(x, p["up"]).gelu(), p["down"])


def init_transformer_layer(rng: np.random.Generator, d: int, dtype=np.float32) -> dict:
    return {
        "attn": init_attention(rng, d, dtype),
        "ln1": init_layer_norm(d, dtype),
        "ffn": init_ffn(rng, d, 2 * d, dtype),
        "ln2": init_layer_norm(d, dtype),
    }


def transformer_layer(x: Tensor, p: dict, cfg: AttentionConfig, causal: bool = False) -> Tensor:
    """Post-norm block: LN(x + SelfAttn(x)) then LN(.. + FFN(..))."""
    x = layer_norm(x + multi_head_attention(x, x, x, cfg, p["attn"], causal=causal), p["ln1"])
    return layer_norm(x + feed_forward(x, p["ffn"]), p["ln2"])


def iter_params(tree, prefix: str = ""):
    """Yield (dotted_name, Tensor) pairs over a nested dict/list tree."""
    if isinstance(tree, Tensor):
        yield prefix, tree
    elif isinstance(tree, dict):
        for key in sorted(tree):
            sub = f"{prefix}.{key}" if prefix else key
            yield from iter_params(tree[key], sub)
    elif isinstance(tree, (list, tuple)):
        for i, item in enumerate(tree):
            sub = f"{prefix}.{i}" if prefix else str(i)
            yield from iter_params(item, sub)
    else:
        raise TypeError(f"unexpected node in parameter tree at {prefix!r}: {type(tree)}")


def trainable_params(tree):
    return [(n, t) for n, t in iter_params(tree) if t.requires_grad]
