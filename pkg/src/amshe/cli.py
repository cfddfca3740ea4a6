"""Command-line entry point: ``amshe <experiment> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import sys

from .cli_io import EXPERIMENTS, load_config, parse_config, resolve_workers, write_records
from .experiments import run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amshe", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="key = value config file (defaults are used when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="base seed (overrides run.base_seed)")
        p.add_argument("--workers", type=int, help="worker processes (default: $AMSHE_WORKERS or 1)")
        p.add_argument("--paths", type=int, help="number of paths (overrides run.n_paths)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"run.base_seed": args.seed, "run.n_paths": args.paths}
    try:
        if args.config:
            cfg = load_config(args.config, args.experiment, overrides)
        else:
            cfg = parse_config("", args.experiment, overrides)
        report = run_experiment(cfg, workers=resolve_workers(args.workers))
        written = write_records([report], report.paths, args.out)
    except (ValueError, OSError) as exc:  # library errors subclass ValueError
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for c in report.criteria:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['measured']}")
    print(f"summary: {written['summary']}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
