"""Scenario configuration and its flat ``key = value`` text format.

Times in a scenario are written in the same unit as ``d`` and converted to ticks
(``TICKS_PER_D`` per ``d``).  Example::

    n = 4
    f = 1
    d = 1
    general = 0
    seed = 7
    horizon = 130
    role.3 = byzantine noisy
    strategy.noisy = Random p=0.3
    script.1 = "100 initiate m"
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

from .core import TICKS_PER_D, ConfigError, ProtocolConstants, as_rational, derive_constants

MODES = ("agreement", "broadcast")
ACTIONS = {"initiate", "corrupt", "netfault", "anchor", "bcast", "recover"}


class Role(NamedTuple):
    kind: str  # correct | byzantine | recovering
    strategy: Optional[str] = None
    at: Optional[int] = None  # ticks, recovering nodes only


class StrategySpec(NamedTuple):
    kind: str
    params: Tuple[Tuple[str, str], ...] = ()


class Action(NamedTuple):
    t: int  # ticks
    order: int
    verb: str
    args: Tuple[str, ...]


@dataclass
class ScenarioConfig:
    n: int = 4
    f: int = 1
    d: Fraction = Fraction(1)
    delta: Optional[Fraction] = None
    pi: Optional[Fraction] = None
    rho: Fraction = Fraction(0)
    general: int = 0
    seed: int = 0
    horizon: int = 200 * TICKS_PER_D
    mode: str = "agreement"
    roles: Dict[int, Role] = field(default_factory=dict)
    strategies: Dict[str, StrategySpec] = field(default_factory=dict)
    script: List[Action] = field(default_factory=list)
    drift: bool = False
    wrap_clocks: bool = True
    max_queue: int = 500_000
    phantoms: int = 40
    direct_window: Optional[Fraction] = None  # block R lag bound in scenario units; None = default

    # -- derived ----------------------------------------------------------

    @property
    def scale(self) -> Fraction:
        """Ticks per scenario time unit."""
        return Fraction(TICKS_PER_D) / self.d

    def ticks(self, x, what: str = "time") -> int:
        v = as_rational(x) * self.scale
        if v.denominator != 1:
            raise ConfigError(f"{what} {x} is not a whole number of ticks (1 tick = d/{TICKS_PER_D})")
        return int(v)

    def constants(self) -> ProtocolConstants:
        """Constants in ticks."""
        delta = None if self.delta is None else self.delta * self.scale
        pi = None if self.pi is None else self.pi * self.scale
        return derive_constants(self.n, self.f, TICKS_PER_D, delta, pi, self.rho)

    def role(self, i: int) -> Role:
        return self.roles.get(i, Role("correct"))

    def byzantine(self) -> List[int]:
        return [i for i in range(self.n) if self.role(i).kind == "byzantine"]

    def validate(self) -> ProtocolConstants:
        consts = self.constants()
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not 0 <= self.general < self.n:
            raise ConfigError(f"general {self.general} is not a node")
        for i, role in self.roles.items():
            if not 0 <= i < self.n:
                raise ConfigError(f"role for unknown node {i}")
            if role.kind not in ("correct", "byzantine", "recovering"):
                raise ConfigError(f"unknown role {role.kind!r} for node {i}")
            if role.strategy is not None and role.strategy not in self.strategies:
                raise ConfigError(f"node {i} uses undefined strategy {role.strategy!r}")
        if len(self.byzantine()) > self.f:
            raise ConfigError(f"{len(self.byzantine())} byzantine nodes exceed f={self.f}")
        if self.direct_window is not None and self.direct_window <= 0:
            raise ConfigError("direct_window must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        for a in self.script:
            if a.verb not in ACTIONS:
                raise ConfigError(f"unknown script action {a.verb!r}")
            if a.t < 0:
                raise ConfigError("script times must be non-negative")
        return consts

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def _unquote(raw: str) -> str:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def parse_scenario(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig()
    pending_roles: Dict[int, List[str]] = {}
    pending_script: List[Tuple[int, List[str]]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        value = _unquote(raw)
        try:
            if key in ("n", "f", "general", "seed", "max_queue", "phantoms"):
                setattr(cfg, key, int(value, 0))
            elif key in ("d", "delta", "pi", "rho", "direct_window"):
                setattr(cfg, key, as_rational(value))
            elif key == "horizon":
                pending_script.append((-1, ["horizon", value]))
            elif key == "mode":
                cfg.mode = value
            elif key in ("drift", "wrap_clocks"):
                setattr(cfg, key, value.lower() in ("1", "true", "yes", "on"))
            elif key.startswith("role."):
                pending_roles[int(key[5:])] = value.split()
            elif key.startswith("strategy."):
                parts = value.split()
                if not parts:
                    raise ConfigError(f"line {lineno}: empty strategy")
                params = []
                for p in parts[1:]:
                    if "=" not in p:
                        raise ConfigError(f"line {lineno}: strategy parameter {p!r} is not key=value")
                    k, v = p.split("=", 1)
                    params.append((k, v))
                cfg.strategies[key[9:]] = StrategySpec(parts[0], tuple(params))
            elif key.startswith("script."):
                pending_script.append((int(key[7:]), shlex.split(value)))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    # time conversions need the final d
    for order, parts in pending_script:
        if order < 0:
            cfg.horizon = cfg.ticks(parts[1], "horizon")
            continue
        if len(parts) < 2:
            raise ConfigError(f"script.{order}: expected '<t> <action> [args]'")
        cfg.script.append(Action(cfg.ticks(parts[0], f"script.{order} time"), order, parts[1], tuple(parts[2:])))
    cfg.script.sort(key=lambda a: (a.t, a.order))
    for i, parts in pending_roles.items():
        kind = parts[0] if parts else ""
        if kind == "correct":
            cfg.roles[i] = Role("correct")
        elif kind == "byzantine":
            cfg.roles[i] = Role("byzantine", parts[1] if len(parts) > 1 else None)
        elif kind == "recovering":
            if len(parts) < 2:
                raise ConfigError(f"role.{i}: recovering needs a time")
            cfg.roles[i] = Role("recovering", parts[2] if len(parts) > 2 else None, cfg.ticks(parts[1], f"role.{i}"))
        else:
            raise ConfigError(f"role.{i}: unknown role {kind!r}")
    cfg.validate()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text())


def dump_scenario(cfg: ScenarioConfig) -> str:
    """Inverse of :func:`parse_scenario` (up to comments and ordering)."""
    unit = cfg.scale

    def t(x: int) -> str:
        v = Fraction(x) / unit
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"

    lines = [f"n = {cfg.n}", f"f = {cfg.f}", f"d = {cfg.d}"]
    if cfg.delta is not None:
        lines += [f"delta = {cfg.delta}", f"pi = {cfg.pi}"]
    lines += [f"rho = {cfg.rho}", f"general = {cfg.general}", f"seed = {cfg.seed}",
              f"horizon = {t(cfg.horizon)}", f"mode = {cfg.mode}"]
    if cfg.direct_window is not None:
        lines.append(f"direct_window = {cfg.direct_window}")
    if cfg.drift:
        lines.append("drift = true")
    if not cfg.wrap_clocks:
        lines.append("wrap_clocks = false")
    for i in sorted(cfg.roles):
        r = cfg.roles[i]
        if r.kind == "recovering":
            lines.append(f"role.{i} = recovering {t(r.at)}" + (f" {r.strategy}" if r.strategy else ""))
        else:
            lines.append(f"role.{i} = {r.kind}" + (f" {r.strategy}" if r.strategy else ""))
    for name in sorted(cfg.strategies):
        s = cfg.strategies[name]
        lines.append(f"strategy.{name} = " + " ".join([s.kind] + [f"{k}={v}" for k, v in s.params]))
    for a in cfg.script:
        lines.append(f'script.{a.order} = "{" ".join([t(a.t), a.verb, *a.args])}"')
    return "\n".join(lines) + "\n"
