"""Command line interface.

Subcommands: run, compare, sweep, graph-info, problem-gen, oracle.
Exit codes: 0 ok, 1 config/validation error, 2 numerical divergence, 3 I/O.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, RunConfig, load_config
from .dynamics import DivergenceError
from .graphs import GraphError
from .objectives import save_problem_bundle
from .oracle import OracleError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dismd",
        description="Distributed stochastic mirror descent simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, multi_config=False):
        if multi_config:
            p.add_argument("--config", action="append", required=True, dest="configs",
                           help="config file (repeatable)")
        else:
            p.add_argument("--config", required=True, help="config file")
        p.add_argument("--seed", type=int, default=None, help="override run seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    add_common(sub.add_parser("run", help="run one experiment"))
    add_common(sub.add_parser("compare", help="run several configs, one aligned CSV"),
               multi_config=True)

    sweep = sub.add_parser("sweep", help="rerun one config across parameter values")
    add_common(sweep)
    sweep.add_argument("--param", required=True, help="parameter path, e.g. hyperparams.sigma")
    sweep.add_argument("--values", required=True, help="comma-separated values")

    add_common(sub.add_parser("graph-info", help="print graph spectra report"))
    add_common(sub.add_parser("problem-gen", help="generate and save a problem bundle"))
    add_common(sub.add_parser("oracle", help="solve the reference optimum and print it"))
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    return cfg


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    if args.out is not None:
        return Path(args.out)
    if cfg is not None and cfg["run"]["out"]:
        return Path(cfg["run"]["out"])
    raise ConfigError("no output directory: set run.out in the config or pass --out")


def _dispatch(args) -> int:
    if args.command == "run":
        cfg = _load(args)
        out = _out_dir(args, cfg)
        metrics_path, manifest_path = harness.cmd_run(cfg, out)
        if not args.quiet:
            print(f"wrote {metrics_path} and {manifest_path}")
        return EXIT_OK

    if args.command == "compare":
        configs, labels = [], []
        for path in args.configs:
            cfg = load_config(path)
            if args.seed is not None:
                cfg.set("run", "seed", args.seed)
            configs.append(cfg)
            label = Path(path).stem
            if label in labels:
                label = f"{label}_{len(labels)}"
            labels.append(label)
        out = _out_dir(args, configs[0])
        csv_path = harness.cmd_compare(configs, labels, out, shared_seed=args.seed)
        if not args.quiet:
            print(f"wrote {csv_path}")
        return EXIT_OK

    if args.command == "sweep":
        cfg = _load(args)
        values = [v for v in args.values.split(",") if v != ""]
        out = _out_dir(args, cfg)
        summary = harness.cmd_sweep(cfg, args.param, values, out)
        if not args.quiet:
            print(f"wrote {summary}")
        return EXIT_OK

    if args.command == "graph-info":
        cfg = _load(args)
        print(harness.graph_info_report(cfg))
        if args.out is not None:
            harness.export_graph_matrices(cfg, args.out)
            if not args.quiet:
                print(f"wrote adjacency.csv and laplacian.csv to {args.out}")
        return EXIT_OK

    if args.command == "problem-gen":
        cfg = _load(args)
        out = _out_dir(args, cfg)
        problem = harness.build_problem(cfg)
        manifest = save_problem_bundle(problem, out)
        if not args.quiet:
            print(f"wrote problem bundle to {manifest.parent}")
        return EXIT_OK

    if args.command == "oracle":
        cfg = _load(args)
        print(harness.oracle_report(cfg))
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, GraphError, OracleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.records:
            last = exc.records[-1]
            print(f"last finite metrics: step {last.step}, t {last.t!r}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
