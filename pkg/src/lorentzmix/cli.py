"""Command-line entry point: one subcommand per experiment plus `report`.

Exit codes: 0 all verdicts pass, 1 verdict failure, 2 config or table
validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, SchemaError, validate_config
from .geometry import TableError
from .runner import MissingBundle, emit_report, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lorentzmix",
        description="mixing-rate laboratory for Z^2-extensions and the "
        "periodic Lorentz gas",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", default=None, help="output bundle directory")
        sp.add_argument("--workers", type=int, default=None, help="worker hint")
        sp.add_argument("--quiet", action="store_true")
    rp = sub.add_parser("report", help="print the verdicts of a bundle")
    rp.add_argument("--bundle", required=True, help="bundle directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        try:
            return emit_report(args.bundle)
        except MissingBundle as e:
            print(f"error: {e}", file=sys.stderr)
            return 2

    try:
        cfg = validate_config(args.config)
    except (SchemaError, TableError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if cfg.experiment != args.command:
        print(
            f"config error: config requests experiment {cfg.experiment!r}, "
            f"subcommand is {args.command!r}",
            file=sys.stderr,
        )
        return 2
    if args.workers is not None:
        cfg.params["workers"] = args.workers
        if cfg.is_billiard:
            cfg.system.num_threads = args.workers

    try:
        bundle = run_experiment(cfg, args.out)
    except (SchemaError, TableError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure: record and signal
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    if not args.quiet:
        for name, ok in sorted(bundle["verdicts"].items()):
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if bundle["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
