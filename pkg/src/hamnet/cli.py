"""Command-line entry point.

Subcommands: gen-fixtures, train, eval, predict, graph, sweep-l.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .config import PipelineConfig, build_config
from .data import SyntheticConfig, gen_synthetic, load_dataset, load_meta
from .errors import ConfigError, DataError, HamnetError, NumericalError, ShapeError
from .spatial_graph import build_graph, graph_to_dot, graph_to_json
from .train import (evaluate, load_checkpoint, predict,
                    sweep_interaction_rounds, train)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; the CLI contract wants 1
    def error(self, message: str):
        raise ConfigError(message)


_CONFIG_HELP = {
    "d": "model width (must match the dataset meta)",
    "heads": "attention heads (must divide d)",
    "interaction_rounds": "cross-modal interaction rounds L",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, default=None,
                                type=lambda s: s.lower() in ("true", "1", "yes", "on"),
                                metavar="BOOL", help=_CONFIG_HELP.get(f.name, ""))
        else:
            typ = {"int": int, "float": float, "str": str}[f.type]
            parser.add_argument(flag, default=None, type=typ,
                                help=_CONFIG_HELP.get(f.name, ""))


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    for f in fields(PipelineConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    return build_config(args.config, overrides)


def _meta_for(data_path: str, meta_path: str | None):
    if meta_path:
        return load_meta(meta_path)
    sibling = Path(data_path).parent / "meta.json"
    if not sibling.exists():
        raise DataError(f"no --meta given and no sibling meta file at {sibling}")
    return load_meta(sibling)


def _cmd_gen_fixtures(args: argparse.Namespace) -> int:
    cfg = SyntheticConfig(
        seed=args.seed, n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
        m_range=(args.m_min, args.m_max), n_range=(args.n_min, args.n_max),
        d=args.d, d_v=args.d_v, concept_vocab=args.concept_vocab,
        relevance_rate=args.relevance_rate, entity_density=args.entity_density,
    )
    summary = gen_synthetic(cfg, args.out)
    print(f"wrote {summary.counts} to {args.out} "
          f"(entity token fraction {summary.entity_token_fraction:.3f})")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    result = train(config)
    print(f"done: {len(result.history)} epochs, best_val_f1 {result.best_val_f1:.4f}, "
          f"checkpoint at {config.checkpoint_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    examples = load_dataset(args.data, model.meta)
    report = evaluate(model, examples, oracle=args.oracle)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        for line in report.lines():
            print(line)
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    examples = load_dataset(args.data, model.meta)
    rows = predict(model, examples)
    out = Path(args.out)
    with out.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(rows)} predictions to {out}")
    return 0


def _cmd_graph(args: argparse.Namespace) -> int:
    import numpy as np

    from . import tensor as T

    meta = _meta_for(args.data, args.meta)
    examples = load_dataset(args.data, meta)
    if not (0 <= args.index < len(examples)):
        raise ConfigError(f"--index {args.index} out of range for {len(examples)} examples")
    ex = examples[args.index]
    # structure only: node states do not affect the dump
    graph = build_graph(T.constant(np.zeros(1)),
                        T.constant(np.zeros((len(ex.objects), 1))),
                        [o.bbox for o in ex.objects])
    if args.format == "json":
        print(json.dumps(graph_to_json(graph), indent=2))
    else:
        print(graph_to_dot(graph))
    return 0


def _cmd_sweep_l(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"--values expects comma-separated integers, got '{args.values}'")
    if not values or any(v < 0 for v in values):
        raise ConfigError("--values needs at least one non-negative round count")
    rows = sweep_interaction_rounds(config, values, log=lambda *_: None)
    print(f"{'L':>3}  {'precision':>9}  {'recall':>9}  {'f1':>9}")
    for row in rows:
        print(f"{row['interaction_rounds']:>3}  {row['precision']:>9.4f}  "
              f"{row['recall']:>9.4f}  {row['f1']:>9.4f}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="hamnet",
                     description="Multimodal NER: train, evaluate, and inspect.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-fixtures", parents=[], help="write synthetic JSONL fixtures")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--n-train", type=int, default=32)
    g.add_argument("--n-val", type=int, default=16)
    g.add_argument("--n-test", type=int, default=16)
    g.add_argument("--m-min", type=int, default=6, help="min tokens per sentence")
    g.add_argument("--m-max", type=int, default=12, help="max tokens per sentence")
    g.add_argument("--n-min", type=int, default=2, help="min objects per image")
    g.add_argument("--n-max", type=int, default=5, help="max objects per image")
    g.add_argument("--d", type=int, default=32)
    g.add_argument("--d-v", type=int, default=24)
    g.add_argument("--concept-vocab", type=int, default=32)
    g.add_argument("--relevance-rate", type=float, default=1.0)
    g.add_argument("--entity-density", type=float, default=0.3)
    g.set_defaults(func=_cmd_gen_fixtures)

    t = sub.add_parser("train", help="train from a config file (flags override)")
    _add_config_flags(t)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--json", action="store_true", help="emit the report as JSON")
    e.add_argument("--oracle", action="store_true",
                   help="score gold labels against themselves (metric sanity)")
    e.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write span predictions as JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    gr = sub.add_parser("graph", help="dump the spatial graph of one example")
    gr.add_argument("--data", required=True)
    gr.add_argument("--meta", help="meta file (default: meta.json beside --data)")
    gr.add_argument("--index", type=int, required=True)
    gr.add_argument("--format", choices=("json", "dot"), default="json")
    gr.set_defaults(func=_cmd_graph)

    s = sub.add_parser("sweep-l", help="train/eval once per interaction-round count")
    _add_config_flags(s)
    s.add_argument("--values", default="1,2,3,4,5",
                   help="comma-separated interaction round counts")
    s.set_defaults(func=_cmd_sweep_l)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
