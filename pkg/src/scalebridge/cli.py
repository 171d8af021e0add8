"""Command-line entry point.

One subcommand per experiment kind plus ``list``.  Subcommands share the
flags --config, --seed, --workers, --out and --json-errors; parameters
beyond those come from the config file.  Exit codes: 0 success, 2 invalid
config, 3 budget exceeded, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (BudgetExceededError, InsufficientSampleError,
                     NumericalError, ScalebridgeError, ValidationError)
from .harness import EXPERIMENTS, ExperimentConfig, list_experiments, \
    load_config, run

__all__ = ["main", "build_parser"]

_EXIT_CODES = (
    (ValidationError, 2),
    (InsufficientSampleError, 2),
    (BudgetExceededError, 3),
    (NumericalError, 4),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scalebridge",
        description="Declarative experiment runner for the scalebridge "
                    "simulation library.")
    sub = parser.add_subparsers(dest="command", required=True)

    lister = sub.add_parser("list", help="print the experiment catalog")
    lister.add_argument("--json", action="store_true",
                        help="machine-readable catalog")

    for kind in sorted(EXPERIMENTS):
        spec = EXPERIMENTS[kind]
        p = sub.add_parser(kind, help=spec.description,
                           description=spec.description)
        p.add_argument("--config", metavar="PATH",
                       help="INI or JSON experiment config")
        p.add_argument("--seed", metavar="U64", type=int,
                       help="base seed (overrides config)")
        p.add_argument("--workers", metavar="N", type=int,
                       help="worker pool size (overrides config)")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (overrides config)")
        p.add_argument("--json-errors", action="store_true",
                       help="emit errors as JSON on stderr")
    return parser


def _emit_error(exc: Exception, code: int, as_json: bool):
    if as_json:
        payload = {"error": type(exc).__name__, "message": str(exc),
                   "exit_code": code}
        print(json.dumps(payload), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        sys.stdout.write(list_experiments(as_json=args.json))
        return 0
    try:
        if args.config:
            config = load_config(args.config, kind=args.command,
                                 seed=args.seed, workers=args.workers,
                                 out=args.out)
        else:
            config = ExperimentConfig.create(
                args.command, {},
                seed=args.seed if args.seed is not None else 0,
                workers=args.workers if args.workers is not None else 1,
                out=args.out)
        result = run(config)
    except ScalebridgeError as exc:
        for err_type, code in _EXIT_CODES:
            if isinstance(exc, err_type):
                _emit_error(exc, code, args.json_errors)
                return code
        raise
    print(f"wrote {len(result.files)} data file(s) + manifest.json "
          f"to {result.out_dir}")
    for key, value in result.summary.items():
        print(f"  {key}: {value}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
