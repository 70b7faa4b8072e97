"""Recommendation pipeline: fused entity representations, prompt assembly,
preference scoring, and the two training stages (entity alignment, then
item prediction)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .backbone import embed_tokens, forward_hidden
from .errors import ConfigError, EmptyInputError, ShapeMismatchError
from .fusion import (ContrastiveConfig, adaptive_gate_fuse, infonce,
                     knowledge_anchored_crossattn, project_view)
from .kg import kg_entity_embeddings
from .optim import adam_step_from_tape

log = logging.getLogger(__name__)

DOMAINS = ("entities", "items")


# ------------------------------------------------------------ entity tables

def entity_tables(model) -> dict:
    """All three entity views projected to the shared width.

    Graph rows carry gradient back into the R-GCN; text/vision rows start
    from frozen pooled features, so only their projections train.
    """
    kg_raw = kg_entity_embeddings(model.graph, model.rgcn)
    txt_raw = Tensor(model.cache.entity_text_raw())
    vis_raw = Tensor(model.cache.entity_vision_raw())
    return {
        "kg": project_view(kg_raw, "kg", model.fusion),
        "txt": project_view(txt_raw, "txt", model.fusion),
        "vis": project_view(vis_raw, "vis", model.fusion),
    }


def _single_key_align(rows: Tensor, attn: dict) -> Tensor:
    """Cross-attention collapsed to each row attending to itself alone.

    With one key the softmax weight is 1, so the output is the value and
    output projections applied row-wise; queries drop out entirely.
    """
    return nn.linear(nn.linear(rows, attn["v"]), attn["o"])


def candidate_table(model, tables: dict, domain: str) -> tuple:
    """(fused rows, candidate entity ids) for a scoring domain.

    Candidate fusion must not depend on any conversation, so the alignment
    step uses each entity as its own attention context.
    """
    if domain not in DOMAINS:
        raise ConfigError(f"unknown scoring domain {domain!r}")
    cfg = model.cfg
    txt_al = _single_key_align(tables["txt"], model.fusion["attn_txt"])
    vis_al = _single_key_align(tables["vis"], model.fusion["attn_vis"])
    fused = adaptive_gate_fuse(tables["kg"], txt_al, vis_al,
                               model.fusion["gate"],
                               use_txt=cfg.entity_text_path,
                               use_vis=cfg.entity_visual_path)
    if domain == "entities":
        return fused, list(range(model.graph.n_entities))
    ids = model.item_ids
    return ad.embedding(fused, np.asarray(ids)), list(ids)


# ---------------------------------------------------- per-conversation path

def mentioned_entities(turns) -> list:
    """Sorted unique entity ids mentioned anywhere in the given turns."""
    seen = set()
    for t in turns:
        seen.update(t.entity_mentions)
    return sorted(seen)


def conv_entity_fusion(model, tables: dict, ent_ids: list,
                       return_gates: bool = False):
    """Fused representations of a conversation's mentioned entities.

    Empty mention set falls back to the learned null-entity row.
    """
    cfg = model.cfg
    if not ent_ids:
        out = (model.fusion["null"], None, None)
        return out if return_gates else out[0]
    idx = np.asarray(ent_ids)
    kg_c = ad.embedding(tables["kg"], idx)
    txt_c = ad.embedding(tables["txt"], idx)
    vis_c = ad.embedding(tables["vis"], idx)
    if cfg.entity_text_path:
        txt_c = knowledge_anchored_crossattn(kg_c, txt_c,
                                             model.fusion["attn_txt"],
                                             cfg.n_heads)
    if cfg.entity_visual_path:
        vis_c = knowledge_anchored_crossattn(kg_c, vis_c,
                                             model.fusion["attn_vis"],
                                             cfg.n_heads)
    fused, g_txt, g_vis = adaptive_gate_fuse(
        kg_c, txt_c, vis_c, model.fusion["gate"],
        use_txt=cfg.entity_text_path, use_vis=cfg.entity_visual_path,
        return_gates=True)
    if return_gates:
        return fused, g_txt, g_vis
    return fused


def inject_entities(model, E_fuse: Tensor, conv_embeds: Tensor) -> Tensor:
    """Conversation-aware entity rows: attend into the dialogue embeddings
    and keep a residual path to the fused input."""
    if E_fuse.shape[0] < 1 or conv_embeds.shape[0] < 1:
        raise EmptyInputError("inject_entities needs nonempty inputs")
    if E_fuse.shape[1] != conv_embeds.shape[1]:
        raise ShapeMismatchError(
            f"entity width {E_fuse.shape[1]} vs dialogue width "
            f"{conv_embeds.shape[1]}")
    cfg = nn.AttentionConfig(model_dim=E_fuse.shape[1],
                             num_heads=model.cfg.n_heads)
    return nn.multi_head_attention(E_fuse, conv_embeds, conv_embeds, cfg,
                                   model.inject) + E_fuse


def build_rec_prompt(model, conv_id: str, turns, tables: dict) -> tuple:
    """Soft segments for recommendation: [entity rows, task prompt,
    dialogue embeddings]. Returns (segments, mentioned ids, gate info)."""
    ctx_ids = model.cache.context_tokens(conv_id, turns,
                                        model.cfg.rec_dialogue_budget)
    if not ctx_ids:
        raise EmptyInputError(f"conversation {conv_id} has no dialogue tokens")
    ent_ids = mentioned_entities(turns)
    fused, g_txt, g_vis = conv_entity_fusion(model, tables, ent_ids,
                                             return_gates=True)
    conv_embeds = embed_tokens(model.backbone, ctx_ids)
    e_final = inject_entities(model, fused, conv_embeds)
    segments = [e_final, model.prompts["rec"], conv_embeds]
    gates = {
        "gate_txt_mean": float(g_txt.data.mean()) if g_txt is not None else None,
        "gate_vis_mean": float(g_vis.data.mean()) if g_vis is not None else None,
        "prompt_token_counts": {
            "entity_final": int(e_final.shape[0]),
            "soft": int(model.prompts["rec"].shape[0]),
            "dialogue_tokens": len(ctx_ids),
        },
    }
    return segments, ent_ids, gates


def preference_vector(model, segments) -> Tensor:
    """Final-position hidden state of the causal pass, as a 1 x d row."""
    hidden = forward_hidden(model.backbone, ad.concat(segments, axis=0))
    return hidden[hidden.shape[0] - 1:]


# ------------------------------------------------------------------ scoring

@dataclass
class ScoreDistribution:
    ids: list
    probs: np.ndarray
    domain: str

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown scoring domain {self.domain!r}")
        if len(self.ids) != len(self.probs):
            raise ShapeMismatchError("one probability per candidate required")
        if len(self.ids) == 0:
            raise EmptyInputError("empty candidate table")
        if self.probs.min() < 0 or abs(float(self.probs.sum()) - 1.0) > 1e-6:
            raise ShapeMismatchError("scores must form a probability vector")


def candidate_logits(pref: Tensor, table: Tensor) -> Tensor:
    """(1, candidates) dot-product scores."""
    if pref.shape[1] != table.shape[1]:
        raise ShapeMismatchError(
            f"preference width {pref.shape[1]} vs table {table.shape[1]}")
    return pref @ table.T


def score_items(pref: Tensor, table: Tensor, ids: list,
                domain: str) -> ScoreDistribution:
    if len(ids) == 0:
        raise EmptyInputError("empty candidate table")
    z = candidate_logits(pref, table).data[0]
    return ScoreDistribution(list(ids), ad.softmax_vec(z), domain)


# ----------------------------------------------------------------- training

def _batch_entity_set(convs) -> list:
    # whole dialogues, so item mentions in final turns join the alignment set
    out = set()
    for c in convs:
        out.update(mentioned_entities(c.turns))
    return sorted(out)


def contrastive_terms(tables: dict, batch_ents: list,
                      con: ContrastiveConfig):
    """alpha- and beta-weighted alignment losses over the batch entity set."""
    if not batch_ents or (con.alpha == 0 and con.beta == 0):
        return None
    idx = np.asarray(batch_ents)
    kg_b = ad.embedding(tables["kg"], idx)
    total = None
    if con.alpha > 0:
        total = con.alpha * infonce(kg_b, ad.embedding(tables["txt"], idx),
                                    con.tau)
    if con.beta > 0:
        term = con.beta * infonce(kg_b, ad.embedding(tables["vis"], idx),
                                  con.tau)
        total = term if total is None else total + term
    return total


def _multi_target_ce(logits: Tensor, targets: list) -> Tensor:
    """Sum of -log softmax(logits)[t] over several targets of one row."""
    rows = ad.concat([logits] * len(targets), axis=0)
    return ad.cross_entropy_rows(rows, np.asarray(targets))


def pretrain_batch_loss(model, convs, tables: dict, con: ContrastiveConfig):
    """Stage I objective: mentioned-entity retrieval CE over the entity
    domain plus contrastive alignment. Returns (loss, info)."""
    cand, cand_ids = candidate_table(model, tables, "entities")
    total = None
    info = {"ce_conversations": 0, "skipped_empty_mentions": 0}
    for c in convs:
        turns = c.context_turns()
        # predict every entity the dialogue mentions, including ones the
        # upcoming response will surface; the prompt still sees only context
        ents = mentioned_entities(c.turns)
        if not ents:
            log.info("conversation %s mentions no entities, CE skipped", c.id)
            info["skipped_empty_mentions"] += 1
            continue
        segments, _, _ = build_rec_prompt(model, c.id, turns, tables)
        pref = preference_vector(model, segments)
        ce = _multi_target_ce(candidate_logits(pref, cand), ents)
        total = ce if total is None else total + ce
        info["ce_conversations"] += 1
    extra = contrastive_terms(tables, _batch_entity_set(convs), con)
    if extra is not None:
        total = extra if total is None else total + extra
    return total, info


def finetune_batch_loss(model, convs, tables: dict, con: ContrastiveConfig):
    """Stage II objective: target-item CE over the item domain plus the
    same contrastive terms. Returns (loss, info)."""
    cand, cand_ids = candidate_table(model, tables, "items")
    col = {item: j for j, item in enumerate(cand_ids)}
    total = None
    info = {"ce_conversations": 0, "skipped_no_target": 0}
    for c in convs:
        if not c.target_items:
            log.info("conversation %s has no target item, skipped", c.id)
            info["skipped_no_target"] += 1
            continue
        turns = c.context_turns()
        segments, _, _ = build_rec_prompt(model, c.id, turns, tables)
        pref = preference_vector(model, segments)
        cols = [col[t] for t in c.target_items]
        ce = _multi_target_ce(candidate_logits(pref, cand), cols)
        total = ce if total is None else total + ce
        info["ce_conversations"] += 1
    extra = contrastive_terms(tables, _batch_entity_set(convs), con)
    if extra is not None:
        total = extra if total is None else total + extra
    return total, info


def _apply_step(model, loss, state):
    params = model.trainable_params()
    ad.zero_grads(dict(params))
    loss.backward()
    adam_step_from_tape(params, state)
    ad.zero_grads(dict(params))


def pretrain_step(model, convs, state) -> dict:
    """One Stage I update over a mini-batch. Returns loss breakdown."""
    con = ContrastiveConfig(model.cfg.tau, model.cfg.alpha, model.cfg.beta)
    loss, info = pretrain_batch_loss(model, convs, entity_tables(model), con)
    if loss is None:
        log.warning("batch produced no Stage I loss terms, step skipped")
        return {"loss": 0.0, **info, "stepped": False}
    _apply_step(model, loss, state)
    return {"loss": float(loss.data), **info, "stepped": True}


def finetune_step(model, convs, state) -> dict:
    """One Stage II update over a mini-batch."""
    con = ContrastiveConfig(model.cfg.tau, model.cfg.alpha, model.cfg.beta)
    loss, info = finetune_batch_loss(model, convs, entity_tables(model), con)
    if loss is None:
        log.warning("batch produced no Stage II loss terms, step skipped")
        return {"loss": 0.0, **info, "stepped": False}
    _apply_step(model, loss, state)
    return {"loss": float(loss.data), **info, "stepped": True}


# ---------------------------------------------------------------- inference

def recommend_topk(model, conv_id: str, turns, k: int,
                   tables: dict | None = None) -> list:
    """Top-k (item id, probability) pairs, ties broken by ascending id.

    With cfg.mask_mentioned set, items already named in the dialogue are
    dropped before the cut."""
    if tables is None:
        tables = entity_tables(model)
    cand, ids = candidate_table(model, tables, "items")
    segments, ent_ids, _ = build_rec_prompt(model, conv_id, turns, tables)
    dist = score_items(preference_vector(model, segments), cand, ids, "items")
    by_prob = {i: p for i, p in zip(dist.ids, dist.probs)}
    pool = dist.ids
    if model.cfg.mask_mentioned:
        mentioned = set(ent_ids)
        pool = [i for i in pool if i not in mentioned] or pool
    order = sorted(pool, key=lambda i: (-by_prob[i], i))
    return [(i, float(by_prob[i])) for i in order[:max(k, 0)]]


def rank_all_items(model, conv_id: str, turns, tables: dict) -> list:
    """Full item ranking for evaluation."""
    return [i for i, _ in recommend_topk(model, conv_id, turns,
                                         len(model.item_ids), tables)]
