"""Command-line entry point: ``riskgraph <stage> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or validation error.
"""

import argparse
import dataclasses
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, RiskGraphError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int, help="overrides every seed in the config")
    p.add_argument("--out", default=".", help="working directory for artifacts")
    p.add_argument("--mode", choices=["full_batch", "sampled"])
    p.add_argument("--aggregation", choices=["attention", "degree_norm"])
    p.add_argument("--threshold", type=float, help="classification threshold")
    p.add_argument("--strict-time-edges", action="store_true", default=None,
                   help="drop training messages that arrive from later transactions")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="riskgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write a synthetic transaction/identity pair")
    p = sub.add_parser("ingest", parents=[common], help="load and join the input tables")
    p.add_argument("--transactions")
    p.add_argument("--identity")
    sub.add_parser("preprocess", parents=[common], help="fit and apply feature preprocessing")
    sub.add_parser("build-graph", parents=[common], help="build the shared-attribute graph")
    sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p = sub.add_parser("evaluate", parents=[common], help="metrics report for a split")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--checkpoint")
    sub.add_parser("report", parents=[common], help="collect a human-readable run report")
    p = sub.add_parser("score", parents=[common], help="per-transaction risk scores")
    p.add_argument("--checkpoint")
    p.add_argument("--transactions")
    p.add_argument("--identity")
    p.add_argument("--output")
    p = sub.add_parser("sweep", parents=[common], help="hidden-dim or dropout sensitivity sweep")
    p.add_argument("--param", required=True, choices=sorted(pipeline.SWEEP_DEFAULTS))
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--parallel", action="store_true")
    return parser


def resolve_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    train_changes = {}
    if args.mode is not None:
        train_changes["mode"] = args.mode
    if args.strict_time_edges:
        train_changes["strict_time_edges"] = True
    if train_changes:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **train_changes))
    if args.aggregation is not None:
        cfg = dataclasses.replace(
            cfg, model=dataclasses.replace(cfg.model, aggregation=args.aggregation))
    if args.threshold is not None:
        cfg = dataclasses.replace(
            cfg, eval=dataclasses.replace(cfg.eval, threshold=args.threshold),
            train=dataclasses.replace(cfg.train, threshold=args.threshold))
    return cfg


def dispatch(args, cfg):
    out = args.out
    cmd = args.command
    if cmd == "synth":
        return pipeline.run_synth(cfg, out)
    if cmd == "ingest":
        return pipeline.run_ingest(cfg, out, args.transactions, args.identity)
    if cmd == "preprocess":
        return pipeline.run_preprocess(cfg, out)
    if cmd == "build-graph":
        return pipeline.run_build_graph(cfg, out)
    if cmd == "train":
        return pipeline.run_train(cfg, out)
    if cmd == "evaluate":
        return pipeline.run_evaluate(cfg, out, args.split, args.checkpoint)
    if cmd == "report":
        return pipeline.run_report(cfg, out)
    if cmd == "score":
        return pipeline.run_score(cfg, out, args.checkpoint, args.transactions,
                                  args.identity, args.output)
    if cmd == "sweep":
        return pipeline.run_sweep(cfg, out, args.param, args.values, args.parallel)
    raise AssertionError(cmd)


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        cfg = resolve_config(args)
        summary = dispatch(args, cfg)
    except ConfigError as exc:
        print(f"riskgraph {stage}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RiskGraphError, OSError, ValueError, IndexError) as exc:
        kind = type(exc).__name__
        print(f"riskgraph {stage}: {kind}: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
