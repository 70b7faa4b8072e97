"""Model assembly: frozen encoders, trainable parameter trees, and the
corpus-level cache of frozen-encoder features.

Frozen encoders are seeded separately (``frozen_seed``) from the trainable
initialization (``seed``), so different training seeds share the same
"pretrained" encoders and a single FeatureCache can be reused across runs.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .autodiff import Tensor
from .backbone import init_backbone
from .config import RunConfig
from .conv import init_perceiver
from .corpus import dialogue_text, truncate_context
from .encoders import (TextEncoderParams, VisionEncoderParams, avg_pool,
                       encode_pages, encode_text, init_text_encoder,
                       init_vision_encoder, tokenize)
from .fusion import init_fusion
from .kg import description_text, init_rgcn
from .render import render_text


class FeatureCache:
    """Lazily computed frozen-encoder features, shared across models that
    use the same frozen seed. Everything stored here is plain numpy."""

    def __init__(self, text_enc: TextEncoderParams, vis_enc: VisionEncoderParams,
                 vocab, graph, descriptions):
        self.text_enc = text_enc
        self.vis_enc = vis_enc
        self.vocab = vocab
        self.graph = graph
        self.descriptions = descriptions
        self._entity_txt = None
        self._entity_vis = None
        self._tokens = {}
        self._summary = {}
        self._vis_rows = {}
        self._txt_rows = {}

    def _entity_tokens(self, e: int):
        return tokenize(description_text(self.descriptions, e), self.vocab)

    def entity_text_raw(self) -> np.ndarray:
        """(n_entities, d_txt) pooled frozen text features, centered over
        the entity set; pooled features share a large common component that
        would otherwise swamp the differences that matter."""
        if self._entity_txt is None:
            rows = np.zeros((self.graph.n_entities, self.text_enc.d_txt),
                            dtype=np.float32)
            for e in range(self.graph.n_entities):
                ids = self._entity_tokens(e)
                if ids:
                    rows[e] = avg_pool(encode_text(ids, self.text_enc)).data
            self._entity_txt = rows - rows.mean(axis=0, keepdims=True)
        return self._entity_txt

    def entity_vision_raw(self) -> np.ndarray:
        """(n_entities, d_vis) pooled frozen features of rendered pages,
        centered over the entity set like the text features."""
        if self._entity_vis is None:
            rows = np.zeros((self.graph.n_entities, self.vis_enc.d_vis),
                            dtype=np.float32)
            for e in range(self.graph.n_entities):
                pages = render_text(description_text(self.descriptions, e))
                rows[e] = avg_pool(encode_pages(pages, self.vis_enc)).data
            self._entity_vis = rows - rows.mean(axis=0, keepdims=True)
        return self._entity_vis

    def context_tokens(self, conv_id: str, turns, budget: int) -> list:
        key = (conv_id, len(turns), budget)
        if key not in self._tokens:
            self._tokens[key] = truncate_context(turns, self.vocab, budget)
        return self._tokens[key]

    def text_summary(self, key_id: str, turns) -> np.ndarray:
        """Pooled frozen text vector of a dialogue (tail-truncated)."""
        key = (key_id, len(turns))
        if key not in self._summary:
            ids = truncate_context(turns, self.vocab, self.text_enc.max_len)
            if ids:
                vec = avg_pool(encode_text(ids, self.text_enc)).data
            else:
                vec = np.zeros(self.text_enc.d_txt, dtype=np.float32)
            self._summary[key] = vec
        return self._summary[key]

    def text_rows(self, key_id: str, ids: list) -> np.ndarray:
        """Per-token frozen text features of an id stream (newest tail)."""
        key = (key_id, len(ids))
        if key not in self._txt_rows:
            rows = encode_text(ids, self.text_enc).data
            if rows.shape[0] == 0:
                rows = np.zeros((1, self.text_enc.d_txt), dtype=np.float32)
            self._txt_rows[key] = rows
        return self._txt_rows[key]

    def rendered_rows(self, key_id: str, text: str) -> np.ndarray:
        """(pages*patches, d_vis) frozen features of the rendered text."""
        key = (key_id, len(text))
        if key not in self._vis_rows:
            pages = render_text(text)
            self._vis_rows[key] = encode_pages(pages, self.vis_enc).data
        return self._vis_rows[key]

    def dialogue_rows(self, conv_id: str, turns) -> np.ndarray:
        """Frozen visual features of the full, untruncated dialogue text."""
        return self.rendered_rows(f"dlg:{conv_id}:{len(turns)}",
                                  dialogue_text(turns))


class Model:
    """All parameters of the recommender plus shared plumbing."""

    def __init__(self, cfg: RunConfig, vocab, graph, descriptions,
                 cache: FeatureCache | None = None):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.graph = graph
        self.descriptions = descriptions
        self.item_ids = sorted(graph.items)

        frozen_rng = np.random.default_rng(cfg.frozen_seed)
        self.text_enc = init_text_encoder(
            frozen_rng, len(vocab.id_to_token), cfg.d_txt, cfg.text_max_len,
            n_layers=cfg.text_layers, n_heads=cfg.n_heads)
        self.vis_enc = init_vision_encoder(
            frozen_rng, cfg.d_vis, cfg.patch_size,
            n_layers=cfg.vis_layers, n_heads=cfg.n_heads)

        # trainable init; creation order here is part of the determinism
        # contract, do not reorder
        rng = np.random.default_rng(cfg.seed)
        self.rgcn = init_rgcn(rng, graph.n_entities, graph.relations,
                              cfg.d_kg, cfg.rgcn_layers,
                              include_self=cfg.rgcn_self,
                              normalize=cfg.rgcn_normalize,
                              feature_ids=graph.feature_groups)
        self.fusion = init_fusion(rng, cfg.d, cfg.d_kg, cfg.d_txt, cfg.d_vis,
                                  cfg.n_heads)
        self.backbone = init_backbone(rng, len(vocab.id_to_token), cfg.d,
                                      cfg.backbone_layers, cfg.n_heads,
                                      cfg.max_pos)
        self.inject = nn.init_attention(rng, cfg.d)
        scale = 1.0 / np.sqrt(cfg.d)
        self.prompts = {
            "rec": Tensor(rng.normal(0.0, scale, size=(cfg.w_rec_len, cfg.d))
                          .astype(np.float32), requires_grad=True),
            "conv": Tensor(rng.normal(0.0, scale, size=(cfg.w_conv_len, cfg.d))
                           .astype(np.float32), requires_grad=True),
        }
        self.perceivers = {
            "retr_txt": init_perceiver(rng, cfg.l_r, cfg.d_txt, cfg.d,
                                       cfg.n_heads),
            "retr_vis": init_perceiver(rng, cfg.l_r, cfg.d_vis, cfg.d,
                                       cfg.n_heads),
            "cur_vis": init_perceiver(rng, max(cfg.gamma, 1), cfg.d_vis,
                                      cfg.d, cfg.n_heads),
        }
        self.retr_fuse_attn = nn.init_attention(rng, cfg.d)
        self.nulls = {
            "retr": Tensor(rng.normal(0.0, 0.1, size=(1, cfg.d))
                           .astype(np.float32), requires_grad=True),
            "cur": Tensor(rng.normal(0.0, 0.1, size=(1, cfg.d))
                          .astype(np.float32), requires_grad=True),
        }

        if cache is None:
            cache = FeatureCache(self.text_enc, self.vis_enc, vocab, graph,
                                 descriptions)
        self.cache = cache
        self.retrieval = None  # set after training / checkpoint load
        self.conv_by_id = {}

    def attach_retrieval(self, index, convs) -> None:
        """Install a retrieval index and the conversations it refers to."""
        from .errors import ShapeMismatchError
        self.conv_by_id = {c.id: c for c in convs}
        missing = [cid for cid in index.ids if cid not in self.conv_by_id]
        if missing:
            raise ShapeMismatchError(
                f"index references unknown conversations: {missing[:5]}")
        self.retrieval = index

    def trainable_tree(self) -> dict:
        return {
            "rgcn": self.rgcn.tree,
            "fusion": self.fusion,
            "backbone": self.backbone.tree,
            "inject": self.inject,
            "prompts": self.prompts,
            "perceivers": self.perceivers,
            "retr_fuse": self.retr_fuse_attn,
            "nulls": self.nulls,
        }

    def trainable_params(self) -> list:
        return nn.trainable_params(self.trainable_tree())

    def conv_trainable_tree(self) -> dict:
        """Parameter groups updated by generation training. The shared
        backbone and every ranking-side group stay as item training left
        them, so generation cannot degrade recommendation quality; the
        vocabulary head is generation-only and trains here."""
        return {
            "prompts": {"conv": self.prompts["conv"]},
            "perceivers": self.perceivers,
            "retr_fuse": self.retr_fuse_attn,
            "nulls": self.nulls,
            "backbone": {"head": self.backbone.tree["head"]},
        }

    def conv_trainable_params(self) -> list:
        return nn.trainable_params(self.conv_trainable_tree())

    def frozen_tree(self) -> dict:
        return {"text_enc": self.text_enc.tree, "vis_enc": self.vis_enc.tree}

    def all_named_arrays(self) -> dict:
        out = {}
        for name, t in nn.iter_params(self.trainable_tree(), "train"):
            out[name] = t.data
        for name, t in nn.iter_params(self.frozen_tree(), "frozen"):
            out[name] = t.data
        return out

    def load_named_arrays(self, arrays: dict) -> None:
        """Overwrite parameters in place from a checkpoint tensor dict."""
        from .errors import CheckpointError
        seen = set()
        for name, t in list(nn.iter_params(self.trainable_tree(), "train")) + \
                list(nn.iter_params(self.frozen_tree(), "frozen")):
            if name not in arrays:
                raise CheckpointError(f"checkpoint missing tensor {name}")
            arr = arrays[name]
            if tuple(arr.shape) != tuple(t.data.shape):
                raise CheckpointError(
                    f"tensor {name}: checkpoint shape {arr.shape} vs "
                    f"model {t.data.shape}")
            t.data = arr.astype(t.data.dtype).copy()
            seen.add(name)
        extra = set(arrays) - seen
        if extra:
            raise CheckpointError(f"checkpoint has unknown tensors: {sorted(extra)[:5]}")
