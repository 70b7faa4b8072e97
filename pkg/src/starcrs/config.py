"""Run configuration: one flat dataclass covering every tunable, a
key=value file format with # comments, CLI-style overrides, and validation
that reports every problem at once."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass

from .errors import ConfigError

log = logging.getLogger(__name__)

SEED_ENV_VAR = "STARCRS_SEED"

ABLATION_SWITCHES = ("entity_text_path", "entity_visual_path",
                     "retrieval_text_path", "retrieval_visual_path",
                     "current_visual_path")


@dataclass
class RunConfig:
    # widths
    d: int = 32
    d_txt: int = 48
    d_vis: int = 40
    d_kg: int = 32
    n_heads: int = 4
    backbone_layers: int = 2
    text_layers: int = 2
    vis_layers: int = 2
    rgcn_layers: int = 1
    max_pos: int = 512
    text_max_len: int = 256
    vocab_max: int = 512
    patch_size: int = 16
    # fusion and contrastive terms
    tau: float = 0.07
    alpha: float = 1e-4
    beta: float = 1e-4
    # soft prompts and resamplers
    w_rec_len: int = 10
    w_conv_len: int = 10
    l_r: int = 16
    gamma: int = 8
    k_sim: int = 2
    # dialogue token budgets inside the backbone prompt
    rec_dialogue_budget: int = 256
    conv_dialogue_budget: int = 160
    # graph propagation
    rgcn_self: bool = True
    rgcn_normalize: bool = True
    # training
    lr: float = 3e-3
    # generation stage updates a small parameter subset and tolerates a
    # hotter step; 0 inherits lr
    conv_lr: float = 5e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    epochs_stage1: int = 3
    epochs_stage2: int = 10
    epochs_conv: int = 5
    seed: int = 0
    frozen_seed: int = 1234
    # decoding
    decode: str = "greedy"
    top_k: int = 5
    max_new_tokens: int = 40
    # ablation switches; each removes exactly one input pathway
    entity_text_path: bool = True
    entity_visual_path: bool = True
    retrieval_text_path: bool = True
    retrieval_visual_path: bool = True
    current_visual_path: bool = True
    mask_mentioned: bool = False
    # paths
    corpus_path: str = ""
    triples_path: str = ""
    descriptions_path: str = ""
    out_dir: str = "runs"

    def validate(self) -> None:
        problems = []
        positive_ints = ("d", "d_txt", "d_vis", "d_kg", "n_heads",
                         "backbone_layers", "text_layers", "vis_layers",
                         "rgcn_layers", "max_pos", "text_max_len", "vocab_max",
                         "patch_size", "w_rec_len", "w_conv_len", "l_r",
                         "rec_dialogue_budget", "conv_dialogue_budget",
                         "batch_size", "top_k", "max_new_tokens")
        for name in positive_ints:
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("gamma", "k_sim", "epochs_stage1", "epochs_stage2",
                     "epochs_conv"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        for name in ("tau", "lr"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.conv_lr < 0:
            problems.append("conv_lr must be >= 0")
        for name in ("alpha", "beta"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.d % self.n_heads != 0:
            problems.append(f"d {self.d} not divisible by n_heads {self.n_heads}")
        if self.decode not in ("greedy", "top_k"):
            problems.append(f"decode must be greedy or top_k, got {self.decode!r}")
        conv_rows = (self.l_r + self.gamma + self.w_conv_len +
                     self.conv_dialogue_budget + self.max_new_tokens)
        if conv_rows > self.max_pos:
            problems.append(
                f"response prompt needs {conv_rows} positions, max_pos is {self.max_pos}")
        rec_rows = self.w_rec_len + self.rec_dialogue_budget + 16
        if rec_rows > self.max_pos:
            problems.append(
                f"recommendation prompt needs ~{rec_rows} positions, "
                f"max_pos is {self.max_pos}")
        if problems:
            raise ConfigError(problems)


def _coerce(name: str, ftype, raw: str):
    raw = raw.strip()
    if ftype is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: cannot read {raw!r} as a boolean")
    try:
        return ftype(raw)
    except ValueError as e:
        raise ConfigError(f"{name}: cannot read {raw!r} as {ftype.__name__}") from e


def _field_types():
    return {f.name: f.type if isinstance(f.type, type) else type(f.default)
            for f in dataclasses.fields(RunConfig)}


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """New config with key=value string overrides applied."""
    types = _field_types()
    updates = {}
    problems = []
    for key, raw in pairs:
        if key not in types:
            problems.append(f"unknown config key {key!r}")
            continue
        try:
            updates[key] = _coerce(key, types[key], raw)
        except ConfigError as e:
            problems.extend(e.problems)
    if problems:
        raise ConfigError(problems)
    return dataclasses.replace(cfg, **updates)


def load_config(path) -> RunConfig:
    """Flat key=value file; blank lines and # comments ignored."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {body!r}")
            key, raw = body.split("=", 1)
            pairs.append((key.strip(), raw))
    cfg = apply_overrides(RunConfig(), pairs)
    return apply_env_seed(cfg)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(RunConfig):
            fh.write(f"{f.name}={getattr(cfg, f.name)}\n")


def apply_env_seed(cfg: RunConfig) -> RunConfig:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return cfg
    try:
        seed = int(raw)
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from e
    if seed != cfg.seed:
        log.info("seed %d overridden to %d by %s", cfg.seed, seed, SEED_ENV_VAR)
    return dataclasses.replace(cfg, seed=seed)
