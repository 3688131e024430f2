"""Command line entry point: ``pibttp run | bench | validate-map``.

Exit codes: 0 success, 1 violation/deadlock/cap, 2 bad input.
"""
from __future__ import annotations

import argparse
import json
import sys

from .bench import BenchConfig, BenchmarkError, InstanceFailure, resolve_map, run_benchmark, validate_map
from .engine import Policy
from .sim import InstanceError, generate_taskset, run_instance, write_trace
from .world import MapError, decompose, load_map

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pibttp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one instance and print its metrics as JSON")
    run.add_argument("--map", required=True, help="shipped map name (env1..env4, deadend) or .map path")
    run.add_argument("--policy", required=True, choices=[p.value for p in Policy])
    run.add_argument("--agents", type=int, required=True)
    run.add_argument("--tasks", type=int, default=50)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--trace", help="write a JSON-lines trace here")
    run.add_argument("--settle", action="store_true", help="keep running until no agent is inside a tree")

    bench = sub.add_parser("bench", help="run a makespan sweep and write CSV files")
    bench.add_argument("--config", help="key=value config file (defaults: 4 maps, 3 policies, n=5..40)")
    bench.add_argument("--out", help="output directory (overrides the config's out key)")
    bench.add_argument("--trials", type=int, help="override the number of trials")
    bench.add_argument("--workers", type=int, help="override the worker-process count")

    val = sub.add_parser("validate-map", help="check a map against the environment assumptions")
    val.add_argument("map")
    return parser


def _cmd_run(args) -> int:
    try:
        env = load_map(resolve_map(args.map))
        decomp = decompose(env)
        taskset = generate_taskset(env, decomp, args.tasks, args.seed)
        result = run_instance(env, decomp, args.agents, taskset, args.policy, args.seed, trace=bool(args.trace), settle=args.settle)
    except (MapError, InstanceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.trace:
        write_trace(result.trace, args.trace)
    print(json.dumps(result.metrics.summary()))
    if not result.ok:
        print(f"{result.status}: {result.diagnostics}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _cmd_bench(args) -> int:
    try:
        config = BenchConfig.load(args.config) if args.config else BenchConfig()
        if args.trials is not None:
            config.trials = args.trials
        if args.workers is not None:
            config.workers = args.workers
        config.__post_init__()
        out = args.out or config.out
        if out is None:
            raise BenchmarkError("no output directory: pass --out or set out= in the config")
    except (BenchmarkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        rows, aggs = run_benchmark(config, out)
    except BenchmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL if isinstance(exc, InstanceFailure) else EXIT_INPUT
    print(f"wrote {len(rows)} runs and {len(aggs)} aggregates to {out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    report = validate_map(resolve_map(args.map))
    print(report)
    return EXIT_OK if report.ok else EXIT_INPUT


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "bench": _cmd_bench, "validate-map": _cmd_validate}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
