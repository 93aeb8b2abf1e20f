"""Seed sweeps: run + check many seeds, summarise, and shrink the first counterexample."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .checker import check_trace
from .engine import SimulationOverflow, sim_run
from .scenario import Role, ScenarioConfig, StrategySpec


@dataclass
class SeedResult:
    seed: int
    passed: bool
    failed: Tuple[str, ...] = ()
    diagnostics_failed: Tuple[str, ...] = ()
    counts: Dict[str, int] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class SweepSummary:
    results: List[SeedResult]
    shrunk_horizon: Optional[int] = None
    counterexample: Optional[str] = None

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def passes(self) -> int:
        return sum(r.passed for r in self.results)

    @property
    def first_failure(self) -> Optional[SeedResult]:
        return next((r for r in self.results if not r.passed), None)

    def violations(self, prop: str) -> int:
        return sum(prop in r.failed or prop in r.diagnostics_failed for r in self.results)

    def count(self, kind: str) -> int:
        return sum(r.counts.get(kind, 0) for r in self.results)

    def checked(self, prop: str) -> int:
        return sum(r.checked.get(prop, 0) for r in self.results)

    def summary_lines(self) -> List[str]:
        lines = [f"{self.passes}/{self.total} pass"]
        bad = self.first_failure
        if bad is not None:
            what = bad.error or ",".join(bad.failed)
            lines.append(f"first failing seed {bad.seed}: {what}")
            if self.shrunk_horizon is not None:
                lines.append(f"shrunk horizon: {self.shrunk_horizon} ticks")
            if self.counterexample:
                lines.append(f"counterexample trace: {self.counterexample}")
        diag = sorted({p for r in self.results for p in r.diagnostics_failed})
        if diag:
            lines.append("diagnostic failures: " + ",".join(diag))
        return lines


COUNTED = ("iaccept", "decide", "abort", "accept", "initiate")


def run_one(cfg: ScenarioConfig, seed: int, diagnostics: bool = False) -> SeedResult:
    run_cfg = cfg.with_seed(seed)
    try:
        trace = sim_run(run_cfg)
    except SimulationOverflow as exc:
        return SeedResult(seed, False, ("Overflow",), error=str(exc))
    report = check_trace(trace, run_cfg, diagnostics)
    counts: Dict[str, int] = {}
    for e in trace.events:
        if e.kind in COUNTED and e.node >= 0 and run_cfg.role(e.node).kind != "byzantine":
            counts[e.kind] = counts.get(e.kind, 0) + 1
    return SeedResult(
        seed, report.passed,
        tuple(v.prop for v in report.verdicts if not v.passed and not v.diagnostic),
        tuple(v.prop for v in report.verdicts if not v.passed and v.diagnostic),
        counts,
        {v.prop: v.checked for v in report.verdicts},
    )


def _run_chunk(args) -> List[SeedResult]:
    cfg, seeds, diagnostics = args
    return [run_one(cfg, s, diagnostics) for s in seeds]


def shrink_horizon(cfg: ScenarioConfig, seed: int, failed: Sequence[str], diagnostics: bool = False) -> int:
    """Smallest horizon (to ``d/4``) at which the same properties still fail."""
    step = max(1, int(cfg.constants().d) // 4)
    lo, hi = 0, cfg.horizon // step
    target = set(failed)
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        res = run_one(replace(cfg, horizon=mid * step), seed, diagnostics)
        if target & set(res.failed):
            hi = mid
        else:
            lo = mid
    return hi * step


def with_strategy(cfg: ScenarioConfig, kind: str, params: Iterable[Tuple[str, str]] = ()) -> ScenarioConfig:
    """Same scenario with every byzantine node driven by ``kind``."""
    strategies = dict(cfg.strategies)
    strategies["family"] = StrategySpec(kind, tuple(params))
    roles = {i: (Role("byzantine", "family") if r.kind == "byzantine" else r) for i, r in cfg.roles.items()}
    return replace(cfg, strategies=strategies, roles=roles)


def adv_sweep(base: ScenarioConfig, seeds: Iterable[int], family: Optional[str] = None, jobs: int = 1,
              diagnostics: bool = False, shrink: bool = True, counterexample_dir=None) -> SweepSummary:
    cfg = with_strategy(base, family) if family else base
    cfg.validate()
    seeds = list(seeds)
    if jobs > 1 and len(seeds) > 1:
        chunks = [seeds[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_chunk, [(cfg, c, diagnostics) for c in chunks]))
        results = sorted((r for part in parts for r in part), key=lambda r: r.seed)
    else:
        results = _run_chunk((cfg, seeds, diagnostics))
    summary = SweepSummary(results)
    bad = summary.first_failure
    if bad is not None and shrink and bad.error is None:
        summary.shrunk_horizon = shrink_horizon(cfg, bad.seed, bad.failed, diagnostics)
        if counterexample_dir is not None:
            path = Path(counterexample_dir) / f"counterexample-seed{bad.seed}.trace"
            sim_run(replace(cfg, horizon=summary.shrunk_horizon, seed=bad.seed)).write(path)
            summary.counterexample = str(path)
    return summary
