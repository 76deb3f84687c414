"""Command-line front end: run, sweep, suite, validate."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import SUITES, NotSweepable, parse_values, run_suite, sweep
from .system import Deadlock, System, metrics_table_csv


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"wrote {path}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out_dir)
    stem = Path(args.config).stem
    trace = None
    if args.trace:
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        trace = open(args.trace, "w")
    try:
        result = System(cfg, trace=trace).run()
    finally:
        if trace:
            trace.close()
    _write(out / f"{stem}_metrics.csv", result.metrics_csv({"seed": cfg.seed}))
    _write(out / f"{stem}_tasks.csv", result.task_log_csv())
    m = result.metrics
    print(f"tasks {m.tasks_completed}  throughput {m.throughput:.2f} flits/us  "
          f"injection {m.injection_rate:.2f} flits/us  latency {m.mean_latency_ns:.0f} ns")
    for v in result.violations:
        print(f"VIOLATION {v}")
    return 1 if result.violations else 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    rows = sweep(cfg, args.axis, parse_values(args.axis, args.values), jobs=args.jobs)
    name = args.output or Path(args.out_dir) / f"{Path(args.config).stem}_{args.axis}.csv"
    _write(Path(name), metrics_table_csv(rows))
    return 1 if any(r["violations"] for r in rows) else 0


def cmd_suite(args) -> int:
    names = list(SUITES) if args.name == "all" else [args.name]
    ok = True
    for name in names:
        rep = run_suite(name, jobs=args.jobs)
        print(f"== {name}")
        for line in rep.lines():
            print(line)
        if args.out_dir:
            _write(Path(args.out_dir) / f"suite_{name}.csv", rep.csv())
        ok &= rep.passed
    return 0 if ok else 1


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: {len(cfg.hwas)} accelerators, {len(cfg.chains)} chain groups, "
          f"{len(cfg.workloads)} workloads")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noc-accel", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--trace", help="write the event trace here")
    r.add_argument("--out-dir", default=".")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep one parameter")
    s.add_argument("config")
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out-dir", default=".")
    s.add_argument("-o", "--output", help="CSV path (default <out-dir>/<config>_<axis>.csv)")
    s.set_defaults(func=cmd_sweep)

    u = sub.add_parser("suite", help="run a scripted experiment and its checks")
    u.add_argument("name", choices=[*SUITES, "all"])
    u.add_argument("--jobs", type=int, default=1)
    u.add_argument("--out-dir")
    u.set_defaults(func=cmd_suite)

    v = sub.add_parser("validate", help="parse and check a configuration")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print("configuration errors:", file=sys.stderr)
        for err in e.errors:
            print(f"  {err}", file=sys.stderr)
        return 2
    except NotSweepable as e:
        print(e, file=sys.stderr)
        return 2
    except Deadlock as e:
        print(f"deadlock: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
