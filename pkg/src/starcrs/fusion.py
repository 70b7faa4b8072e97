"""Knowledge-anchored contrastive fusion of the three entity views.

Each view (graph, text, vision) is projected into the shared d-space by a
small two-layer network; InfoNCE pulls text and vision toward the graph
anchor within a batch; cross-attention (graph as queries) aligns the other
views per conversation; and a per-dimension logistic gate takes a convex
combination of the three views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Tensor, cross_entropy_rows
from .errors import ConfigError, EmptyInputError, ShapeMismatchError

VIEWS = ("kg", "txt", "vis")


@dataclass
class ContrastiveConfig:
    tau: float = 0.07
    alpha: float = 1e-4
    beta: float = 1e-4

    def __post_init__(self):
        problems = []
        if not self.tau > 0:
            problems.append(f"tau must be positive, got {self.tau}")
        if self.alpha < 0 or self.beta < 0:
            problems.append("alpha and beta must be nonnegative")
        if problems:
            raise ConfigError(problems)


def init_projection(rng: np.random.Generator, n_in: int, d: int, dtype=np.float32) -> dict:
    return {
        "up": nn.init_linear(rng, n_in, d, dtype),
        "down": nn.init_linear(rng, d, d, dtype),
    }


def init_gate(rng: np.random.Generator, d: int, dtype=np.float32) -> dict:
    return {
        "txt": nn.init_linear(rng, d, d, dtype),
        "vis": nn.init_linear(rng, d, d, dtype),
    }


def init_fusion(rng: np.random.Generator, d: int = 32, d_kg: int = 32,
                d_txt: int = 48, d_vis: int = 40, n_heads: int = 4,
                dtype=np.float32) -> dict:
    """All fusion-side parameters, including the learned null-entity row."""
    return {
        "proj": {
            "kg": init_projection(rng, d_kg, d, dtype),
            "txt": init_projection(rng, d_txt, d, dtype),
            "vis": init_projection(rng, d_vis, d, dtype),
        },
        "attn_txt": nn.init_attention(rng, d, dtype),
        "attn_vis": nn.init_attention(rng, d, dtype),
        "gate": init_gate(rng, d, dtype),
        "null": Tensor(rng.normal(0.0, 0.1, size=(1, d)).astype(dtype),
                       requires_grad=True),
    }


def project_view(v: Tensor, which: str, params: dict) -> Tensor:
    """Map a native-dimension view (rows) into the shared d-space."""
    if which not in VIEWS:
        raise ConfigError(f"unknown view {which!r}, expected one of {VIEWS}")
    p = params["proj"][which]
    expect = p["up"]["W"].shape[0]
    if v.shape[-1] != expect:
        raise ShapeMismatchError(
            f"view {which} expects width {expect}, got {v.shape}")
    return nn.linear(nn.linear(v, p["up"]).tanh(), p["down"])


def infonce(anchors: Tensor, positives: Tensor, tau: float) -> Tensor:
    """Batch InfoNCE with dot-product similarity, summed over anchors.

    Row i of both matrices is the same entity; every other row in the batch
    serves as a negative for anchor i.
    """
    if anchors.shape[0] == 0:
        raise EmptyInputError("infonce needs at least one anchor")
    if anchors.shape != positives.shape:
        raise ShapeMismatchError(
            f"anchor/positive shapes differ: {anchors.shape} vs {positives.shape}")
    logits = (anchors @ positives.T) * (1.0 / tau)
    return cross_entropy_rows(logits, np.arange(anchors.shape[0]))


def knowledge_anchored_crossattn(E_kg: Tensor, E_other: Tensor, attn_params: dict,
                                 n_heads: int = 4) -> Tensor:
    """Attend from graph-view queries into another view's rows."""
    if E_kg.shape[0] == 0:
        raise EmptyInputError("cross-attention over zero entities")
    cfg = nn.AttentionConfig(model_dim=E_kg.shape[1], num_heads=n_heads)
    return nn.multi_head_attention(E_kg, E_other, E_other, cfg, attn_params)


def adaptive_gate_fuse(E_kg: Tensor, E_txt: Tensor, E_vis: Tensor, gate: dict,
                       use_txt: bool = True, use_vis: bool = True,
                       force_gates=None, return_gates: bool = False):
    """Convex per-dimension combination of the three aligned views.

    Gates are logistic in the respective view; dropping a pathway (ablation)
    removes its term from both numerator and denominator. ``force_gates``
    is a test hook pinning (g_txt, g_vis) to given arrays.
    """
    if E_kg.shape != E_txt.shape or E_kg.shape != E_vis.shape:
        raise ShapeMismatchError(
            f"fuse inputs differ in shape: {E_kg.shape}/{E_txt.shape}/{E_vis.shape}")
    if force_gates is not None:
        g_txt = Tensor(np.broadcast_to(np.asarray(force_gates[0], dtype=E_kg.dtype),
                                       E_kg.shape).copy())
        g_vis = Tensor(np.broadcast_to(np.asarray(force_gates[1], dtype=E_kg.dtype),
                                       E_kg.shape).copy())
    else:
        g_txt = nn.linear(E_txt, gate["txt"]).sigmoid()
        g_vis = nn.linear(E_vis, gate["vis"]).sigmoid()
    if use_txt and use_vis:
        num = E_kg + g_txt * E_txt + g_vis * E_vis
        den = g_txt + g_vis + 1.0
    elif use_txt:
        num = E_kg + g_txt * E_txt
        den = g_txt + 1.0
    elif use_vis:
        num = E_kg + g_vis * E_vis
        den = g_vis + 1.0
    else:
        num, den = E_kg, None
    fused = num if den is None else num / den
    if return_gates:
        return fused, g_txt, g_vis
    return fused
