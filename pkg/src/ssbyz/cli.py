"""Batch front-end: run a scenario, sweep seeds, re-check a trace, print constants.

Exit codes: 0 all properties pass, 1 some property fails (or the run overflowed its
event queue), 2 configuration error, 3 trace read/write error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, TextIO

from .checker import check_trace
from .core import ConfigError, as_rational, derive_constants
from .engine import SimulationOverflow, TraceFormatError, read_trace, sim_run
from .scenario import ScenarioConfig, load_scenario
from .sweep import adv_sweep

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _load(path: str, seed: Optional[int]) -> ScenarioConfig:
    try:
        cfg = load_scenario(path)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    return cfg if seed is None else cfg.with_seed(seed)


def parse_seed_range(text: str) -> range:
    """``A..B`` (inclusive) or a single seed."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError(f"bad seed range {text!r}, expected A..B") from None
    if hi < lo:
        raise ConfigError(f"empty seed range {text!r}")
    return range(lo, hi + 1)


def cmd_run(scenario: str, seed: Optional[int] = None, out: Optional[str] = None, check_only: bool = False,
            diagnostics: bool = False, stdout: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    try:
        cfg = _load(scenario, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if check_only:
            if out is None:
                raise ConfigError("--check-only needs --out pointing at an existing trace")
            trace = read_trace(out)
        else:
            trace = sim_run(cfg)
            if out is not None:
                trace.write(out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, TraceFormatError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SimulationOverflow as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = check_trace(trace, cfg, diagnostics)
    text = trace.dumps()
    lines = report.lines()
    lines.append(f"trace sha256 {hashlib.sha256(text.encode()).hexdigest()} events={len(trace.events)}")
    lines.append("PASS" if report.passed else "FAIL " + ",".join(v.prop for v in report.verdicts
                                                                 if not v.passed and not v.diagnostic))
    print("\n".join(lines), file=stdout)
    if out is not None and not check_only:
        try:
            Path(str(out) + ".report").write_text("\n".join(lines) + "\n")
        except OSError as exc:
            print(f"trace error: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_sweep(scenario: str, seeds: str, jobs: int = 1, diagnostics: bool = False, out: Optional[str] = None,
              stdout: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    try:
        cfg = _load(scenario, None)
        seed_range = parse_seed_range(seeds)
        if jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if out is not None:
            Path(out).mkdir(parents=True, exist_ok=True)
        summary = adv_sweep(cfg, seed_range, jobs=jobs, diagnostics=diagnostics, counterexample_dir=out)
    except OSError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_IO
    print("\n".join(summary.summary_lines()), file=stdout)
    return EXIT_OK if summary.passes == summary.total else EXIT_FAIL


def cmd_constants(n: int, f: int, d: Fraction = Fraction(1), stdout: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    try:
        consts = derive_constants(n, f, d)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name, value in consts.table():
        print(f"{name:<9} {value}", file=stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssbyz", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario and check the trace")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="trace path (written, or read with --check-only)")
    run.add_argument("--check-only", action="store_true", help="re-verify the trace at --out")
    run.add_argument("--diagnostics", action="store_true", help="include proof side-condition checks")

    sw = sub.add_parser("sweep", help="run and check a range of seeds")
    sw.add_argument("--scenario", required=True)
    sw.add_argument("--seeds", required=True, help="A..B inclusive")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", help="directory for the first counterexample trace")
    sw.add_argument("--diagnostics", action="store_true")

    c = sub.add_parser("constants", help="print the derived constant table")
    c.add_argument("n", type=int)
    c.add_argument("f", type=int)
    c.add_argument("d", nargs="?", default="1")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.scenario, args.seed, args.out, args.check_only, args.diagnostics)
    if args.command == "sweep":
        return cmd_sweep(args.scenario, args.seeds, args.jobs, args.diagnostics, args.out)
    try:
        d = as_rational(args.d)
    except (ValueError, ZeroDivisionError):
        print(f"config error: bad d {args.d!r}", file=sys.stderr)
        return EXIT_CONFIG
    return cmd_constants(args.n, args.f, d)


if __name__ == "__main__":
    sys.exit(main())
