"""Byzantine strategies.

A strategy drives one faulty node.  The engine calls :meth:`Strategy.step` at the
wake-up times the strategy asks for and, for reactive strategies, :meth:`Strategy.observe`
on every message a non-faulty node sends (the adversary is rushing: it sees traffic
at send time).  Strategies return :class:`Send` records; the transport stamps the
true sender on every message, so identities cannot be forged.
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Type

from .core import TICKS_PER_D, ConfigError, Kind, Message, NodeId, ProtocolConstants, Time, Value

_PRIMITIVE = (Kind.SUPPORT, Kind.APPROVE, Kind.READY)
_BROADCAST = (Kind.B_INIT, Kind.B_ECHO, Kind.B_INIT2, Kind.B_ECHO2)


class Send(NamedTuple):
    to: NodeId
    msg: Message
    delay: Time


@dataclass
class View:
    """What a faulty node knows: the topology, the constants and its own random stream."""

    node: NodeId
    n: int
    f: int
    general: NodeId
    consts: ProtocolConstants
    correct: Tuple[NodeId, ...]
    faulty: Tuple[NodeId, ...]
    rng: random.Random
    observed: List[Tuple[Time, Message]] = field(default_factory=list)
    wakeups: List[Time] = field(default_factory=list)

    @property
    def d(self) -> Time:
        return self.consts.d

    def wake(self, t: Time) -> None:
        self.wakeups.append(t)

    def msg(self, kind: Kind, value: Value, origin: NodeId = -1, rnd: int = 0, general: Optional[NodeId] = None) -> Message:
        g = self.general if general is None else general
        return Message(kind, self.node, g, value, origin, rnd)

    def to_all(self, msg: Message, delay: Time = 0, targets: Optional[Sequence[NodeId]] = None) -> List[Send]:
        return [Send(q, msg, delay) for q in (range(self.n) if targets is None else targets)]

    def jitter(self) -> Time:
        return self.rng.randint(0, int(self.consts.delta))


def _values(spec: str) -> List[Value]:
    return [v.encode() for v in spec.split(",") if v]


class Strategy:
    """Base class: silent, non-reactive."""

    name = "Silent"
    reactive = False

    def start(self, view: View) -> None:
        pass

    def step(self, view: View, t: Time) -> List[Send]:
        return []

    def observe(self, view: View, msg: Message, t: Time) -> List[Send]:
        return []

    @classmethod
    def from_params(cls, params: Dict[str, str]) -> "Strategy":
        kwargs = {}
        names = {f.name: f for f in dataclasses.fields(cls)} if dataclasses.is_dataclass(cls) else {}
        for key, raw in params.items():
            if key not in names:
                raise ConfigError(f"strategy {cls.name} has no parameter {key!r}")
            kind = names[key].type
            try:
                kwargs[key] = float(raw) if kind in ("float", float) else int(raw) if kind in ("int", int) else raw
            except ValueError as exc:
                raise ConfigError(f"bad value {raw!r} for {cls.name}.{key}") from exc
        return cls(**kwargs)


@dataclass
class Silent(Strategy):
    name = "Silent"


def _echo_primitives(view: View, msg: Message, targets: Sequence[NodeId], value: Optional[Value] = None) -> List[Send]:
    """Mirror a primitive or broadcast message under our own identity."""
    out = view.msg(msg.kind, msg.value if value is None else value, msg.origin, msg.round, msg.general)
    return [Send(q, out, view.jitter()) for q in targets]


@dataclass
class EquivocatingGeneral(Strategy):
    """Faulty General that sends different values to different nodes, a few ``d`` apart, repeatedly."""

    values: str = "a,b"
    start_at: float = 20.0
    gap: float = 3.0
    period: float = 30.0
    repeats: int = 3
    name = "EquivocatingGeneral"
    reactive = True

    def start(self, view: View) -> None:
        self._vals = _values(self.values)
        self._round = 0
        # contiguous blocks of a seed-rotated node order, e.g. {0,1} and {2,3}
        shift_by = view.rng.randrange(view.n)
        order = [(q + shift_by) % view.n for q in range(view.n)]
        k = len(self._vals)
        size = -(-view.n // k)
        self._groups = [order[i * size:(i + 1) * size] for i in range(k)]
        view.wake(int(self.start_at * view.d))

    def step(self, view: View, t: Time) -> List[Send]:
        out: List[Send] = []
        i = self._round % (2 * len(self._vals))
        if i < len(self._vals):
            m = self._vals[i]
            for q in self._groups[i]:
                out.append(Send(q, view.msg(Kind.INITIATOR, m), view.jitter()))
                out.append(Send(q, view.msg(Kind.SUPPORT, m), view.jitter()))
        self._round += 1
        if i + 1 < len(self._vals):
            view.wake(t + int(self.gap * view.d))
        elif self._round < 2 * len(self._vals) * self.repeats:
            view.wake(t + int(self.period * view.d))
        return out

    def observe(self, view: View, msg: Message, t: Time) -> List[Send]:
        if msg.general != view.general:
            return []
        # back every value to a random half, so correct nodes see conflicting quorums
        targets = [q for q in range(view.n) if view.rng.random() < 0.5]
        if msg.kind in _PRIMITIVE or msg.kind in (Kind.B_ECHO, Kind.B_INIT2, Kind.B_ECHO2):
            return _echo_primitives(view, msg, targets)
        return []


@dataclass
class SilentGeneral(Strategy):
    """Faulty General that only ever talks to one correct node."""

    value: str = "a"
    start_at: float = 20.0
    target: int = -1
    name = "SilentGeneral"

    def start(self, view: View) -> None:
        view.wake(int(self.start_at * view.d))

    def step(self, view: View, t: Time) -> List[Send]:
        target = self.target if self.target >= 0 else view.rng.choice(view.correct)
        m = self.value.encode()
        return [Send(target, view.msg(Kind.INITIATOR, m), 0), Send(target, view.msg(Kind.SUPPORT, m), 0)]


@dataclass
class Flood(Strategy):
    """Sends a steady stream of arbitrary messages of the chosen kinds under its own identity."""

    kinds: str = "SUPPORT,APPROVE,READY"
    rate: float = 2.0
    values: str = "a,b,c"
    start_at: float = 0.0
    name = "Flood"

    def start(self, view: View) -> None:
        self._kinds = [Kind[k.strip()] for k in self.kinds.split(",") if k.strip()]
        self._vals = _values(self.values)
        self._every = max(1, int(view.d / self.rate))
        view.wake(int(self.start_at * view.d))

    def step(self, view: View, t: Time) -> List[Send]:
        rng = view.rng
        kind = rng.choice(self._kinds)
        m = rng.choice(self._vals)
        if kind.is_broadcast:
            p = view.node if kind is Kind.B_INIT else rng.randrange(view.n)
            msg = view.msg(kind, m, p, rng.randint(1, view.f + 1))
        else:
            msg = view.msg(kind, m)
        view.wake(t + self._every)
        return view.to_all(msg, rng.randint(0, int(view.consts.delta)))


@dataclass
class ReadyForger(Strategy):
    """Tries to make correct nodes accept a value nobody correct ever proposed.

    Sends the late-stage messages (ready, approve, support) for ``value`` and the
    broadcast echoes for triples attributed to correct broadcasters.
    """

    value: str = "x"
    start_at: float = 5.0
    period: float = 2.0
    name = "ReadyForger"

    def start(self, view: View) -> None:
        view.wake(int(self.start_at * view.d))

    def step(self, view: View, t: Time) -> List[Send]:
        m = self.value.encode()
        out: List[Send] = []
        for kind in (Kind.READY, Kind.APPROVE, Kind.SUPPORT):
            out += view.to_all(view.msg(kind, m), view.jitter())
        p = view.rng.choice(view.correct)
        k = view.rng.randint(1, view.f + 1)
        for kind in (Kind.B_ECHO, Kind.B_INIT2, Kind.B_ECHO2):
            out += view.to_all(view.msg(kind, m, p, k), view.jitter())
        view.wake(t + int(self.period * view.d))
        return out


@dataclass
class SplitBrain(Strategy):
    """Splits the correct nodes in two and feeds each side a different value.

    When this node is the General it starts both values at once; otherwise it only
    amplifies whatever each side is already doing, side by side.
    """

    values: str = "a,b"
    start_at: float = 20.0
    period: float = 40.0
    repeats: int = 2
    name = "SplitBrain"
    reactive = True

    def start(self, view: View) -> None:
        self._vals = _values(self.values)
        correct = list(view.correct)
        view.rng.shuffle(correct)
        half = len(correct) // 2
        self._sides = [correct[:half], correct[half:]]
        self._side_of = {q: i for i, side in enumerate(self._sides) for q in side}
        self._count = 0
        if view.node == view.general:
            view.wake(int(self.start_at * view.d))

    def step(self, view: View, t: Time) -> List[Send]:
        out: List[Send] = []
        for side, m in zip(self._sides, self._vals):
            for q in side + list(view.faulty):
                out.append(Send(q, view.msg(Kind.INITIATOR, m), 0))
                out.append(Send(q, view.msg(Kind.SUPPORT, m), 0))
        self._count += 1
        if self._count < self.repeats:
            view.wake(t + int(self.period * view.d))
        return out

    def observe(self, view: View, msg: Message, t: Time) -> List[Send]:
        side = self._side_of.get(msg.sender)
        if side is None:
            return []
        return _echo_primitives(view, msg, self._sides[side])


@dataclass
class RandomStrategy(Strategy):
    """Reactive noise: mutates observed traffic and injects its own broadcasts at random."""

    p: float = 0.3
    values: str = "a,b"
    start_at: float = 10.0
    period: float = 7.0
    name = "Random"
    reactive = True

    def start(self, view: View) -> None:
        self._vals = _values(self.values)
        view.wake(int(self.start_at * view.d))

    def step(self, view: View, t: Time) -> List[Send]:
        rng = view.rng
        m = rng.choice(self._vals)
        out: List[Send] = []
        roll = rng.random()
        targets = [q for q in range(view.n) if rng.random() < 0.6]
        if view.node == view.general and roll < 0.5:
            for q in targets:
                out.append(Send(q, view.msg(Kind.INITIATOR, m), view.jitter()))
                out.append(Send(q, view.msg(Kind.SUPPORT, m), view.jitter()))
        elif roll < 0.8:
            k = rng.randint(1, view.f + 1)
            out += [Send(q, view.msg(Kind.B_INIT, m, view.node, k), view.jitter()) for q in targets]
        else:
            kind = rng.choice(_PRIMITIVE)
            out += [Send(q, view.msg(kind, m), view.jitter()) for q in targets]
        view.wake(t + rng.randint(1, int(self.period * view.d)))
        return out

    def observe(self, view: View, msg: Message, t: Time) -> List[Send]:
        rng = view.rng
        if msg.kind is Kind.INITIATOR or rng.random() >= self.p:
            return []
        targets = [q for q in range(view.n) if rng.random() < 0.5]
        value = msg.value if rng.random() < 0.5 else rng.choice(self._vals)
        return _echo_primitives(view, msg, targets, value)


@dataclass
class Withhold(Strategy):
    """Broadcast-layer participant that relays like a correct node but only to ``targets``."""

    targets: str = "half"
    name = "Withhold"
    reactive = True

    def start(self, view: View) -> None:
        if self.targets == "half":
            correct = sorted(view.correct)
            self._targets = correct[: len(correct) // 2] + list(view.faulty)
        else:
            self._targets = [int(x) for x in self.targets.split(",") if x]
        self._sent: set = set()

    def observe(self, view: View, msg: Message, t: Time) -> List[Send]:
        if not msg.kind.is_broadcast:
            return []
        reply = {Kind.B_INIT: Kind.B_ECHO, Kind.B_ECHO: Kind.B_INIT2, Kind.B_INIT2: Kind.B_ECHO2,
                 Kind.B_ECHO2: Kind.B_ECHO2}[msg.kind]
        key = (reply, msg.value, msg.origin, msg.round)
        if key in self._sent:
            return []
        self._sent.add(key)
        out = view.msg(reply, msg.value, msg.origin, msg.round, msg.general)
        return [Send(q, out, 0) for q in self._targets]


@dataclass
class Collude(Strategy):
    """Faulty nodes jointly vouch for a broadcast that a correct node never made."""

    value: str = "x"
    origin: int = -1
    start_at: float = 2.0
    period: float = 3.0
    name = "Collude"

    def start(self, view: View) -> None:
        view.wake(int(self.start_at * view.d))

    def step(self, view: View, t: Time) -> List[Send]:
        p = self.origin if self.origin >= 0 else view.rng.choice(view.correct)
        m = self.value.encode()
        out: List[Send] = []
        for k in range(1, view.f + 2):
            for kind in (Kind.B_ECHO, Kind.B_INIT2, Kind.B_ECHO2):
                out += view.to_all(view.msg(kind, m, p, k), view.jitter())
        view.wake(t + int(self.period * view.d))
        return out


STRATEGIES: Dict[str, Type[Strategy]] = {
    cls.name: cls
    for cls in (Silent, EquivocatingGeneral, SilentGeneral, Flood, ReadyForger, SplitBrain, RandomStrategy,
                Withhold, Collude)
}


def make_strategy(kind: str, params: Optional[Dict[str, str]] = None) -> Strategy:
    try:
        cls = STRATEGIES[kind]
    except KeyError:
        raise ConfigError(f"unknown strategy {kind!r}; known: {', '.join(sorted(STRATEGIES))}") from None
    return cls.from_params(params or {})


def adv_step(strategy: Strategy, view: View, t: Time) -> List[Send]:
    """Messages the faulty node sends at wake-up time ``t``."""
    return strategy.step(view, t)


__all__ = [
    "Send", "View", "Strategy", "STRATEGIES", "make_strategy", "adv_step", "TICKS_PER_D",
    "Silent", "EquivocatingGeneral", "SilentGeneral", "Flood", "ReadyForger", "SplitBrain",
    "RandomStrategy", "Withhold", "Collude",
]
