"""Command line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 execution error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .campaign import (
    InvalidParameter, WorkerFailure, plan_campaign, regenerate_report, run_campaign,
)
from .config import ConfigError, Settings, load_config
from .harness import GoldenFailure, build_system, emit_run_log, execute_run, golden_run
from .injector import FaultSpec
from .targets import OffsetOutOfRange, UnknownTarget, find_target, gather_targets

EXIT_OK, EXIT_USAGE, EXIT_EXEC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_globals(p, suppress):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="INI configuration file")
    p.add_argument("--seed", type=int, default=default, help="override [campaign] seed")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--workers", type=int, default=default, help="worker processes")


def _at(text):
    try:
        tick, event = text.split(":")
        return int(tick), int(event)
    except ValueError:
        raise argparse.ArgumentTypeError("expected <tick>:<event>") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rtosfi", description="Fault injection into a simulated RTOS kernel.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("golden", help="profile the fault-free run")
    _add_globals(p, True)

    p = sub.add_parser("targets", help="target catalog")
    _add_globals(p, True)
    p.add_argument("action", choices=["list"])

    p = sub.add_parser("inject", help="run a single injection")
    _add_globals(p, True)
    p.add_argument("--target", required=True)
    p.add_argument("--byte", type=int, default=0)
    p.add_argument("--bit", type=int, default=0)
    p.add_argument("--type", dest="fault_type", choices=["transient", "permanent"],
                   default="transient")
    p.add_argument("--stuck", type=int, choices=[0, 1], default=None,
                   help="stuck value for permanent faults (default: complement)")
    p.add_argument("--at", type=_at, default=(1, 0), help="injection instant <tick>:<event>")
    p.add_argument("--log", default=None, help="run log path")

    p = sub.add_parser("campaign", help="run a full campaign")
    _add_globals(p, True)

    p = sub.add_parser("report", help="rebuild summary and plot data from runs.csv")
    _add_globals(p, True)
    p.add_argument("dir", nargs="?", default=None)
    p.add_argument("--format", choices=["text", "csv", "all"], default="all")
    return parser


def _settings(args) -> Settings:
    return load_config(args.config).with_overrides(args.seed, args.workers, args.out)


def _golden(settings: Settings):
    return golden_run(settings.kernel, settings.workloads, settings.live)


def cmd_golden(settings: Settings) -> int:
    golden = _golden(settings)
    out = Path(settings.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "golden.profile").write_text(golden.to_text())
    print(f"total_ticks {golden.total_ticks}")
    for wid, (digest, tick) in golden.per_task.items():
        print(f"{wid:10} digest={digest:016x} completion_tick={tick}")
    print(f"wrote {out / 'golden.profile'}")
    return EXIT_OK


def cmd_targets(settings: Settings) -> int:
    k = build_system(settings.kernel, settings.workloads, settings.live)
    for t in gather_targets(k):
        print(f"{t.name},{t.category},{t.size},{t.validity}")
    return EXIT_OK


def cmd_inject(settings: Settings, args) -> int:
    golden = _golden(settings)
    catalog = gather_targets(build_system(settings.kernel, settings.workloads, settings.live))
    target = find_target(catalog, args.target)
    if args.stuck is not None and args.fault_type != "permanent":
        raise UsageError("--stuck only applies to --type permanent")
    spec = FaultSpec(target.name, args.byte, args.bit, args.fault_type, args.at, args.stuck)
    run = execute_run(spec, golden, settings.thresholds, catalog, keep_events=True)
    log = Path(args.log) if args.log else (
        Path(settings.out) / "logs"
        / f"inject_{target.name}_{args.byte}_{args.bit}_{args.fault_type}.log")
    log.parent.mkdir(parents=True, exist_ok=True)
    with open(log, "w") as fh:
        emit_run_log(run, fh, spec, settings.campaign.seed)
    rec = run.injection
    print(f"outcome {run.outcome}")
    print(f"run_ticks {run.run_ticks} golden_ticks {golden.total_ticks}")
    if run.panic is not None:
        print(f"panic {run.panic.reason}: {run.panic.detail}")
    if rec is not None:
        print(f"injected {rec.offset:#x} bit {rec.bit} at {rec.applied_at[0]}:{rec.applied_at[1]}"
              f" ({rec.pre_bit}->{rec.post_bit}), valid={rec.validity.valid}"
              f" ({rec.validity.reason})")
    else:
        print("fault never fired")
    print(f"log {log}")
    return EXIT_OK


def cmd_campaign(settings: Settings) -> int:
    golden = _golden(settings)
    catalog = gather_targets(build_system(settings.kernel, settings.workloads, settings.live))
    cfg = settings.campaign
    plan = plan_campaign(cfg, catalog, golden)
    print(f"{len(plan)} runs ({cfg.per_location} per location, "
          f"{len(cfg.select(catalog))} targets, {', '.join(cfg.fault_types)}), "
          f"{cfg.workers} workers")
    report = run_campaign(plan, golden, cfg, catalog)
    print(f"done in {report.duration_s:.1f} s; results in {cfg.out_dir}")
    for ft in report.fault_types:
        c = report.totals(ft)
        print(f"{ft:10} " + " ".join(f"{o}={c[o]}" for o in sorted(c)))
    return EXIT_OK


def cmd_report(settings: Settings, args) -> int:
    directory = Path(args.dir or settings.out)
    if not (directory / "runs.csv").exists():
        raise FileNotFoundError(f"{directory / 'runs.csv'} not found")
    report = regenerate_report(directory, text=args.format in ("text", "all"),
                               plots=args.format in ("csv", "all"))
    print(report.summary_text(), end="")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: golden, targets, inject, campaign, report")
        settings = _settings(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "golden":
            return cmd_golden(settings)
        if args.command == "targets":
            return cmd_targets(settings)
        if args.command == "inject":
            return cmd_inject(settings, args)
        if args.command == "campaign":
            return cmd_campaign(settings)
        return cmd_report(settings, args)
    except (UsageError, UnknownTarget, OffsetOutOfRange, InvalidParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GoldenFailure, WorkerFailure, OSError, ValueError) as exc:
        print(f"execution error: {exc}", file=sys.stderr)
        return EXIT_EXEC


if __name__ == "__main__":
    sys.exit(main())
