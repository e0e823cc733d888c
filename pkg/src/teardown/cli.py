"""Command line entry point: ``teardown run|compare-modes|compare-arms|validate``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .batch import (
    RunConfig, compare_arms, compare_modes, format_arm_comparison, format_mode_comparison,
    format_reports, run_batch,
)
from .errors import TeardownError, ValidationError
from .scenario import load_scenario

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teardown", description="Seeded dual-arm HDD teardown simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_trials=10):
        p.add_argument("--scenario", nargs="+", required=True,
                       help="scenario JSON file(s) or bundled names (samsung, seagate, western_digital)")
        p.add_argument("--trials", type=_positive, default=default_trials)
        p.add_argument("--seed", type=_u64, default=0)
        p.add_argument("--out", default=None, help="directory for the written report")

    run = sub.add_parser("run", help="run a batch of trials per scenario")
    common(run)
    run.add_argument("--mode", choices=("coarse", "fine"), default="fine")
    run.add_argument("--arms", type=int, choices=(1, 2), default=2)
    run.add_argument("--no-faults", action="store_true", help="disable fault injection")
    run.add_argument("--workers", type=_positive, default=1)

    modes = sub.add_parser("compare-modes", help="L1 clearance and time, coarse vs fine")
    common(modes)

    arms = sub.add_parser("compare-arms", help="makespan with one arm vs two")
    common(arms)
    arms.add_argument("--mode", choices=("coarse", "fine"), default="fine")

    val = sub.add_parser("validate", help="load and validate scenario files")
    val.add_argument("--scenario", nargs="+", required=True)
    return parser


def _emit(text: str, out: str | None, name: str) -> None:
    sys.stdout.write(text)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        scenarios = [load_scenario(s) for s in args.scenario]
        if args.command == "validate":
            for sc in scenarios:
                print(f"{sc.source}: ok ({len(sc.parts)} parts, {len(sc.rules)} rules)")
            return EXIT_OK
        if args.command == "run":
            reports = []
            for sc in scenarios:
                cfg = RunConfig(sc.source, args.trials, args.seed, args.mode, args.arms, args.out,
                                faults=not args.no_faults, workers=args.workers)
                reports.append(run_batch(cfg, sc).report)
            _emit(format_reports(reports), args.out, "summary.txt")
        elif args.command == "compare-modes":
            items = [compare_modes(sc, args.trials, args.seed) for sc in scenarios]
            _emit(format_mode_comparison(items), args.out, "compare_modes.txt")
        elif args.command == "compare-arms":
            items = [compare_arms(sc, args.trials, args.seed, args.mode) for sc in scenarios]
            _emit(format_arm_comparison(items), args.out, "compare_arms.txt")
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TeardownError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
