"""Command-line entry points: train, eval, sweep, generate-corpus,
render-debug, serve."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import RunConfig, apply_env_seed, apply_overrides, load_config
from .errors import StarcrsError

log = logging.getLogger(__name__)


def _split_pairs(items) -> list:
    pairs = []
    for item in items or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        pairs.append((key.strip(), val.strip()))
    return pairs


def _config_from(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, _split_pairs(getattr(args, "set", None)))
    cfg = apply_env_seed(cfg)
    cfg.validate()
    return cfg


def _cmd_train(args) -> int:
    from .train import cmd_train

    cfg = _config_from(args)
    out = cmd_train(cfg)
    print(json.dumps({"checkpoint": out["checkpoint"], "log": out["log"],
                      "final_losses": out["final_losses"]}, indent=2))
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import cmd_eval

    overrides = None
    pairs = _split_pairs(args.set)
    if pairs:
        base = RunConfig()
        changed = apply_overrides(base, pairs)
        overrides = {k: getattr(changed, k) for k, _ in pairs}
    out = cmd_eval(args.checkpoint, split=args.split,
                   ks=tuple(args.ks), overrides=overrides,
                   echo_references=args.echo_references,
                   skip_gen=args.skip_gen)
    print(out["table"])
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(out["json"])
        print(f"report written to {args.json_out}")
    return 0


def _cmd_sweep(args) -> int:
    from .sweep import cmd_sweep

    cfg = _config_from(args)
    values = [float(v) if "." in v or "e" in v.lower() else int(v)
              for v in args.values]
    out = cmd_sweep(cfg, args.param, values, args.seeds, args.out,
                    eval_limit=args.eval_limit)
    print(f"sweep CSV written to {out['csv']} ({len(out['rows'])} rows)")
    return 0


def _cmd_generate_corpus(args) -> int:
    from .corpus import SynthConfig, generate_synthetic, save_corpus
    from .kg import save_descriptions, save_triples

    sc = SynthConfig(num_conversations=args.num_conversations, seed=args.seed)
    convs, graph, descs = generate_synthetic(sc)
    os.makedirs(args.out_dir, exist_ok=True)
    corpus_path = os.path.join(args.out_dir, "corpus.jsonl")
    triples_path = os.path.join(args.out_dir, "triples.tsv")
    descs_path = os.path.join(args.out_dir, "descriptions.jsonl")
    save_corpus(convs, corpus_path)
    save_triples(graph, triples_path)
    save_descriptions(descs, descs_path)
    print(json.dumps({"conversations": len(convs),
                      "entities": graph.n_entities,
                      "corpus": corpus_path, "triples": triples_path,
                      "descriptions": descs_path}, indent=2))
    return 0


def _cmd_render_debug(args) -> int:
    from .render import render_text, save_pages_pgm

    if args.file:
        with open(args.file, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = args.text
    pageset = render_text(text)
    pages = pageset.pages
    info = {
        "pages": int(pages.shape[0]),
        "page_px": [int(pages.shape[1]), int(pages.shape[2])],
        "ink_fraction": float((pages > 0.5).mean()),
        "checksum": int(pages.astype("uint8").sum()),
    }
    if args.out:
        info["files"] = save_pages_pgm(pageset, args.out)
    print(json.dumps(info, indent=2))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.checkpoint, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="starcrs",
        description="Screen-text-aware conversational recommender")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the full training schedule")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test",
                   choices=("train", "valid", "test"))
    e.add_argument("--ks", type=int, nargs="+", default=[1, 10, 50])
    e.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override, e.g. an ablation switch")
    e.add_argument("--echo-references", action="store_true",
                   help="score references against themselves")
    e.add_argument("--skip-gen", action="store_true",
                   help="rank metrics only")
    e.add_argument("--json-out", help="also write the JSON report here")
    e.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("sweep", help="grid over one tunable, CSV out")
    s.add_argument("--config", help="base config file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--param", required=True,
                   choices=("alpha", "beta", "gamma", "k_sim"))
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.add_argument("--eval-limit", type=int, default=None,
                   help="cap test conversations per run")
    s.add_argument("--out", required=True, help="CSV output path")
    s.set_defaults(fn=_cmd_sweep)

    g = sub.add_parser("generate-corpus", help="write the synthetic corpus")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--num-conversations", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_generate_corpus)

    r = sub.add_parser("render-debug", help="rasterize text and report stats")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--file")
    r.add_argument("--out", help="PGM path prefix for the rendered pages")
    r.set_defaults(fn=_cmd_render_debug)

    v = sub.add_parser("serve", help="HTTP chat service on a checkpoint")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8977)
    v.set_defaults(fn=_cmd_serve)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StarcrsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
