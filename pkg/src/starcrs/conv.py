"""Response-generation pipeline: similar-conversation retrieval, perceiver
resampling of retrieved text/visual context, the full-dialogue visual skim,
prompt assembly, teacher-forced training and decoding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .backbone import embed_tokens, forward_hidden, logits
from .corpus import dialogue_text
from .encoders import EOS, RESERVED, SEP, tokenize
from .errors import EmptyInputError, ShapeMismatchError
from .optim import adam_step_from_tape

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- perceivers

def init_perceiver(rng, n_latents: int, d_src: int, d: int,
                   n_heads: int = 4, dtype=np.float32) -> dict:
    """Fixed-length resampler: learned latent queries cross-attend once into
    the (projected) source sequence."""
    return {
        "latents": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d),
                                     size=(n_latents, d)).astype(dtype),
                          requires_grad=True),
        "proj": nn.init_linear(rng, d_src, d, dtype),
        "attn": nn.init_attention(rng, d, dtype),
    }


def perceiver_resample(source, params: dict, n_heads: int = 4) -> Tensor:
    """(m, d_src) -> (n_latents, d) for any m >= 1."""
    src = source if isinstance(source, Tensor) else Tensor(source)
    if src.shape[0] == 0:
        raise EmptyInputError("perceiver needs at least one source row")
    if src.shape[1] != params["proj"]["W"].shape[0]:
        raise ShapeMismatchError(
            f"source width {src.shape[1]} vs projection input "
            f"{params['proj']['W'].shape[0]}")
    kv = nn.linear(src, params["proj"])
    lat = params["latents"]
    cfg = nn.AttentionConfig(model_dim=lat.shape[1], num_heads=n_heads)
    return nn.multi_head_attention(lat, kv, kv, cfg, params["attn"])


# ----------------------------------------------------------------- retrieval

@dataclass
class RetrievalIndex:
    vectors: np.ndarray  # (n, d_txt) float32 summary vectors
    ids: list
    by_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.ids):
            raise ShapeMismatchError(
                f"{self.vectors.shape[0]} vectors for {len(self.ids)} ids")
        self.by_id = {cid: i for i, cid in enumerate(self.ids)}
        if len(self.by_id) != len(self.ids):
            raise ShapeMismatchError("retrieval index ids are not unique")


def build_retrieval_index(train_convs, cache) -> RetrievalIndex:
    """Summary vector per training conversation over its full dialogue."""
    vecs = np.zeros((len(train_convs), cache.text_enc.d_txt), dtype=np.float32)
    ids = []
    for i, c in enumerate(train_convs):
        vecs[i] = cache.text_summary(f"idx:{c.id}", c.turns)
        ids.append(c.id)
    return RetrievalIndex(vecs, ids)


def retrieve_similar(query_vec: np.ndarray, index: RetrievalIndex,
                     k_sim: int, exclude_id: str | None = None) -> list:
    """Top-k conversation ids by cosine similarity, ties by ascending id."""
    if k_sim <= 0:
        return []
    keep = [i for i, cid in enumerate(index.ids) if cid != exclude_id]
    if not keep:
        log.warning("retrieval index empty, returning no neighbors")
        return []
    if len(keep) < k_sim:
        log.warning("retrieval index has %d candidates for k_sim=%d",
                    len(keep), k_sim)
    vecs = index.vectors[keep]
    qn = float(np.linalg.norm(query_vec))
    norms = np.linalg.norm(vecs, axis=1)
    denom = np.maximum(norms * max(qn, 1e-12), 1e-12)
    sims = (vecs @ query_vec.astype(np.float64)) / denom
    order = sorted(range(len(keep)),
                   key=lambda j: (-float(sims[j]), index.ids[keep[j]]))
    return [index.ids[keep[j]] for j in order[:k_sim]]


# ----------------------------------------------------- retrieved-context path

def _retrieved_token_ids(convs, vocab) -> list:
    """Concatenated retrieved dialogues with separator tokens between them."""
    ids = []
    for c in convs:
        if ids:
            ids.append(SEP)
        for t in c.turns:
            ids.append(SEP)
            ids.extend(tokenize(t.speaker, vocab))
            ids.extend(tokenize(t.text, vocab))
    return ids


def encode_retrieved(model, retrieved_convs) -> tuple:
    """(C_bar, V_bar), each l_r x d, from the retrieved conversations."""
    key = "retr:" + ",".join(c.id for c in retrieved_convs)
    ids = _retrieved_token_ids(retrieved_convs, model.vocab)
    txt_rows = model.cache.text_rows(key, ids)
    joined = "\n\n".join(dialogue_text(c.turns) for c in retrieved_convs)
    vis_rows = model.cache.rendered_rows(key, joined)
    c_bar = perceiver_resample(Tensor(txt_rows),
                               model.perceivers["retr_txt"],
                               model.cfg.n_heads)
    v_bar = perceiver_resample(Tensor(vis_rows),
                               model.perceivers["retr_vis"],
                               model.cfg.n_heads)
    return c_bar, v_bar


def fuse_retrieved(model, c_bar: Tensor, v_bar: Tensor) -> Tensor:
    """Cross-attend text-path queries into the visual path."""
    if c_bar.shape != v_bar.shape:
        raise ShapeMismatchError(
            f"retrieved paths differ: {c_bar.shape} vs {v_bar.shape}")
    cfg = nn.AttentionConfig(model_dim=c_bar.shape[1],
                             num_heads=model.cfg.n_heads)
    return nn.multi_head_attention(c_bar, v_bar, v_bar, cfg,
                                   model.retr_fuse_attn)


def retrieved_segment(model, conv_id: str, turns) -> tuple:
    """The C-tilde prompt segment plus the retrieved ids, honoring the
    retrieval ablation switches. Either pathway can be dropped; with both
    dropped (or nothing retrieved) a learned null row stands in."""
    cfg = model.cfg
    use_txt, use_vis = cfg.retrieval_text_path, cfg.retrieval_visual_path
    retrieved = []
    if (use_txt or use_vis) and cfg.k_sim > 0 and model.retrieval is not None:
        qvec = model.cache.text_summary(f"q:{conv_id}", turns)
        got = retrieve_similar(qvec, model.retrieval, cfg.k_sim,
                               exclude_id=conv_id)
        retrieved = [model.conv_by_id[cid] for cid in got]
    if not retrieved or not (use_txt or use_vis):
        return model.nulls["retr"], [c.id for c in retrieved]
    c_bar, v_bar = encode_retrieved(model, retrieved)
    if use_txt and use_vis:
        seg = fuse_retrieved(model, c_bar, v_bar)
    elif use_txt:
        seg = c_bar
    else:
        seg = v_bar
    return seg, [c.id for c in retrieved]


# ------------------------------------------------------- current-visual path

def encode_current_visual(model, conv_id: str, turns) -> Tensor:
    """gamma x d skim of the full (untruncated) dialogue via rendered pages."""
    rows = model.cache.dialogue_rows(conv_id, turns)
    return perceiver_resample(Tensor(rows), model.perceivers["cur_vis"],
                              model.cfg.n_heads)


def current_visual_segment(model, conv_id: str, turns) -> Tensor:
    if not model.cfg.current_visual_path:
        return model.nulls["cur"]
    return encode_current_visual(model, conv_id, turns)


# ------------------------------------------------------------ prompt + loss

def build_conv_prompt(model, conv_id: str, turns) -> tuple:
    """Soft segments and context token ids for response generation.

    Returns (segment tensors in order [C-tilde, V_bar_c, W_conv, ctx-embeds],
    context token ids, diagnostics dict).
    """
    cfg = model.cfg
    retr, retrieved_ids = retrieved_segment(model, conv_id, turns)
    cur = current_visual_segment(model, conv_id, turns)
    ctx_ids = model.cache.context_tokens(conv_id, turns,
                                         cfg.conv_dialogue_budget)
    segments = [retr, cur, model.prompts["conv"]]
    if ctx_ids:
        segments.append(embed_tokens(model.backbone, ctx_ids))
    diag = {
        "retrieved_ids": retrieved_ids,
        "prompt_token_counts": {
            "retrieved_ctx": int(retr.shape[0]),
            "visual_ctx": int(cur.shape[0]),
            "soft": int(model.prompts["conv"].shape[0]),
            "dialogue_tokens": len(ctx_ids),
        },
    }
    return segments, ctx_ids, diag


def response_nll(model, conv_id: str, turns, response: str):
    """Teacher-forced NLL over response tokens only, or None if the
    response is empty."""
    resp_ids = tokenize(response, model.vocab)
    if not resp_ids:
        return None
    targets = resp_ids + [EOS]
    segments, ctx_ids, _ = build_conv_prompt(model, conv_id, turns)
    input_ids = list(ctx_ids) + targets[:-1]
    rows = ad.concat(segments[:3] + [embed_tokens(model.backbone, input_ids)],
                     axis=0)
    hidden = forward_hidden(model.backbone, rows)
    start = sum(int(s.shape[0]) for s in segments[:3]) + len(ctx_ids)
    pred_rows = hidden[start - 1: start - 1 + len(targets)]
    return ad.cross_entropy_rows(logits(model.backbone, pred_rows),
                                 np.asarray(targets))


def conv_batch_loss(model, convs):
    """Summed response NLL over a batch; skips empty responses."""
    total = None
    used = 0
    for c in convs:
        ctx = c.context_turns()
        nll = response_nll(model, c.id, ctx, c.response_text())
        if nll is None:
            log.info("conversation %s has an empty response, skipped", c.id)
            continue
        total = nll if total is None else total + nll
        used += 1
    return total, used


def conv_step(model, convs, state) -> dict:
    """One response-generation training update over a mini-batch."""
    loss, used = conv_batch_loss(model, convs)
    if loss is None:
        log.warning("batch had only empty responses, step skipped")
        return {"loss": 0.0, "responses": 0, "stepped": False}
    # backward reaches every parameter, but only the generation-side
    # groups take the update; see Model.conv_trainable_tree
    all_params = model.trainable_params()
    ad.zero_grads(dict(all_params))
    loss.backward()
    adam_step_from_tape(model.conv_trainable_params(), state)
    ad.zero_grads(dict(all_params))
    return {"loss": float(loss.data), "responses": used, "stepped": True}


# ----------------------------------------------------------------- decoding

@dataclass
class DecodingConfig:
    strategy: str = "greedy"
    max_new_tokens: int = 40
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "top_k"):
            raise ValueError(f"unknown decoding strategy {self.strategy!r}")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


def generate_response(model, conv_id: str, turns,
                      decode: DecodingConfig | None = None) -> str:
    """Autoregressive decode from the assembled response prompt."""
    decode = decode or DecodingConfig()
    segments, ctx_ids, _ = build_conv_prompt(model, conv_id, turns)
    rng = np.random.default_rng(decode.seed)
    out_ids = []
    for _ in range(decode.max_new_tokens):
        ids = list(ctx_ids) + out_ids
        rows = segments[:3] + ([embed_tokens(model.backbone, ids)] if ids else [])
        hidden = forward_hidden(model.backbone, ad.concat(rows, axis=0))
        last = logits(model.backbone, hidden[hidden.shape[0] - 1:]).data[0]
        if decode.strategy == "greedy":
            nxt = int(np.argmax(last))
        else:
            top = sorted(range(len(last)), key=lambda i: (-last[i], i))[:decode.k]
            z = np.asarray([last[i] for i in top], dtype=np.float64)
            z -= z.max()
            p = np.exp(z) / np.exp(z).sum()
            nxt = int(top[rng.choice(len(top), p=p)])
        if nxt == EOS:
            break
        out_ids.append(nxt)
    words = [model.vocab.id_to_token[i] for i in out_ids
             if i >= len(RESERVED)]
    return " ".join(words)
