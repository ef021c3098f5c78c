import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from cubesat_fsw.config import Config
from cubesat_fsw.core.timeline import EventKind, diff_timeline, export_timeline
from cubesat_fsw.harness.bench import BenchSettings, LoadLevel, run_bench
from cubesat_fsw.harness.runner import run_scenario
from cubesat_fsw.harness.scenario import load_scenario
from cubesat_fsw.harness.stats import format_table, read_samples_csv, stats_by_name
from cubesat_fsw.utils.error_handling import (
    ArtifactIOError,
    FlightSoftwareError,
    ScenarioValidationError,
    StatsError,
)
from cubesat_fsw.utils.logger import log_event, logger

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ASSERTION = 2
EXIT_IO = 3


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = Path(args.out) if args.out else Path(Config.OUTPUT_DIR) / scenario.name
    result = run_scenario(scenario, seed=args.seed, out_dir=out_dir)
    timeline = result.timeline
    print(f"scenario {scenario.name} seed {result.system.settings.seed}: {len(timeline)} rows, "
          f"{len(timeline.select(EventKind.GRANT))} grants, {len(timeline.select(EventKind.RESTART))} restarts, "
          f"{len(timeline.select(EventKind.REBOOT))} reboots -> {out_dir}")
    failures = list(result.failures)
    if args.golden:
        golden = Path(args.golden) / f"{scenario.name}.csv"
        if golden.exists():
            diff = diff_timeline(golden, out_dir / "timeline.csv")
            if not diff.equal:
                failures.append(f"golden trace {golden}: {diff.describe()}")
        else:
            export_timeline(timeline, golden)
            print(f"golden trace written to {golden}")
    for failure in failures:
        print(f"FAIL {failure}")
    return EXIT_ASSERTION if failures else EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({len(scenario.roster)} nodes, {len(scenario.uplinks)} uplinks, "
          f"{len(scenario.faults)} faults, {len(scenario.expect)} checks)")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    samples = read_samples_csv(args.samples)
    if not any(samples.values()):
        raise StatsError(f"{args.samples} holds no samples")
    print(format_table(stats_by_name(samples)))
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    diff = diff_timeline(args.timeline_a, args.timeline_b)
    print(diff.describe())
    return EXIT_OK if diff.equal else EXIT_ASSERTION


def cmd_bench(args: argparse.Namespace) -> int:
    settings = BenchSettings(duration_s=args.duration, load=LoadLevel(args.load), payloads=args.payloads,
                             rate_hz=args.rate)
    entries = run_bench(settings)
    print(f"load={settings.load.value} duration={settings.duration_s}s rate={settings.rate_hz}Hz")
    print(format_table(entries))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cubesat_fsw", description="CubeSat flight software simulation")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO instead of FSW_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its artifacts")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help=f"output directory (default {Config.OUTPUT_DIR}/<name>)")
    run.add_argument("--golden", default=None,
                     help="directory of golden timelines: compare against <name>.csv, or write it if missing")
    run.set_defaults(handler=cmd_run)

    validate = sub.add_parser("validate", help="check a scenario file and list every violation")
    validate.add_argument("scenario")
    validate.set_defaults(handler=cmd_validate)

    stats = sub.add_parser("stats", help="latency statistics of a samples CSV (microseconds)")
    stats.add_argument("samples")
    stats.set_defaults(handler=cmd_stats)

    diff = sub.add_parser("diff", help="first divergence between two timeline files")
    diff.add_argument("timeline_a")
    diff.add_argument("timeline_b")
    diff.set_defaults(handler=cmd_diff)

    bench = sub.add_parser("bench", help="wall-clock delivery latency under light or heavy load")
    bench.add_argument("--duration", type=float, default=10.0, help="seconds")
    bench.add_argument("--load", choices=[level.value for level in LoadLevel], default=LoadLevel.LIGHT.value)
    bench.add_argument("--payloads", type=int, default=3)
    bench.add_argument("--rate", type=int, default=Config.BENCH_RATE_HZ, help="publications per second per topic")
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logger.setLevel(logging.INFO)
    try:
        return args.handler(args)
    except ScenarioValidationError as exc:
        print(f"invalid scenario: {len(exc.violations)} violation(s)", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_VALIDATION
    except StatsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ArtifactIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FlightSoftwareError as exc:
        log_event("CLI_ERROR", level=logging.ERROR, command=args.command, code=exc.code, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
