"""Command-line interface: `run` from a config file, `bench` for quick runs, `report`."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import ConfigError, ExperimentConfig, report, run_experiment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ubo", description="Bayesian optimization without a rigid bounding box")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment described by a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seeds", type=int, default=None, help="override the seed count")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--jobs", type=int, default=None)

    p_bench = sub.add_parser("bench", help="run a named benchmark without a config file")
    p_bench.add_argument("--problem", required=True)
    p_bench.add_argument("--method", required=True, help="comma-separated method names")
    p_bench.add_argument("--seeds", type=int, default=1)
    p_bench.add_argument("--budget", type=int, default=None)
    p_bench.add_argument("--small-box", type=float, default=None, help="random small initial box of this side length")
    p_bench.add_argument("--noise", type=float, default=None, help="observation noise std")
    p_bench.add_argument("--out", default="traces")
    p_bench.add_argument("--jobs", type=int, default=None)

    p_report = sub.add_parser("report", help="aggregate traces into a summary CSV")
    p_report.add_argument("--in", dest="trace_dir", required=True)
    p_report.add_argument("--out", dest="out_file", default=None)
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.command == "run":
        cfg = ExperimentConfig.from_json(args.config)
        updates = {}
        if args.seeds is not None:
            updates["seeds"] = tuple(range(args.seeds))
        if args.out is not None:
            updates["out_dir"] = Path(args.out)
        if args.jobs is not None:
            updates["jobs"] = args.jobs
        if updates:
            from dataclasses import replace

            cfg = replace(cfg, **updates)
        return cfg
    options = {}
    if args.small_box is not None:
        options["small_box_side"] = args.small_box
    if args.noise is not None:
        options["noise_std"] = args.noise
    overrides = {}
    if args.budget is not None:
        overrides["budget"] = args.budget
    return ExperimentConfig(
        problem=args.problem,
        methods=tuple(m.strip() for m in args.method.split(",") if m.strip()),
        seeds=tuple(range(args.seeds)),
        out_dir=Path(args.out),
        problem_options=options,
        strategy_overrides=overrides,
        jobs=args.jobs,
    )


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    try:
        if args.command == "report":
            summary = report(args.trace_dir, args.out_file)
            if args.out_file is None:
                sys.stdout.write(summary.to_csv())
            print(f"summarized {sum(s.count for s in summary.per_method.values())} runs "
                  f"across {len(summary.per_method)} methods", file=sys.stderr)
            return EXIT_OK
        cfg = _config_from_args(args)
        result = run_experiment(cfg)
        print(f"{len(result.trace_paths)} runs completed, {len(result.error_paths)} failed", file=sys.stderr)
        if not result.ok:
            for p in result.error_paths:
                print(f"  failed: {p}", file=sys.stderr)
            return EXIT_PARTIAL
        return EXIT_OK
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
