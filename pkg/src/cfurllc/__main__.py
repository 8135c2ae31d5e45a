"""Command line driver: one subcommand per experiment kind.

Exit status is 0 on success, 2 when no cell of the sweep is feasible and
1 on any error (bad arguments, unreadable config, unwritable output).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import CfUrllcError
from .harness import SWEEPS, ExperimentSpec, Kind, check_writable, run
from .sysmodel import Scheme, SystemConfig, load_config

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _grid(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("grid is empty")
    return values


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfurllc", description="Cell-free massive MIMO URLLC experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in Kind:
        name, default = SWEEPS[kind]
        p = sub.add_parser(kind.value, help=f"sweep {name} (default grid {','.join(map(str, default))})")
        p.add_argument("--config", type=Path, help="key = value file overriding the defaults")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--trials", type=int, default=1)
        p.add_argument("--mc-draws", type=int, default=10_000)
        p.add_argument("--scheme", choices=[s.value for s in Scheme], action="append",
                       help="restrict to one scheme (repeatable); all by default")
        p.add_argument("--grid", type=_grid, help=f"comma separated {name} values")
        p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        check_writable(args.out)
        base = load_config(args.config) if args.config else SystemConfig()
        spec = ExperimentSpec(
            kind=Kind(args.kind), grid=args.grid or (), trials=args.trials,
            mc_draws=args.mc_draws, base=base, out=args.out, seed=args.seed,
            schemes=tuple(args.scheme) if args.scheme else tuple(Scheme),
            workers=max(1, args.workers),
        )
        output = run(spec)
    except (OSError, CfUrllcError, ValueError) as exc:
        print(f"cfurllc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for s in output.summary:
        print(f"{s.scheme:4s} {s.variant:24s} {s.value:<10g} feasible {s.feasible}/{s.trials}"
              f"  mean {s.mean_weighted_sum:.6g}")
    if not output.any_feasible:
        print("cfurllc: no feasible cell", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
