"""Identities, exact time, clocks, protocol constants, wire messages and timestamped state.

Real time is an integer number of ticks (``TICKS_PER_D`` ticks per ``d``).  Local
clock readings live on a 64-bit wrapping counter; every comparison between two
local readings goes through :func:`span`, which is wrap-safe as long as the
measured interval is far below the wrap period.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple, Union

TICKS_PER_D = 1000
WRAP = 1 << 64
HALF_WRAP = 1 << 63

Time = Union[int, Fraction]
NodeId = int
Value = bytes
BOTTOM = None


class ConfigError(ValueError):
    """Invalid topology, timing constants or scenario parameters."""


def as_rational(x) -> Fraction:
    """Exact rational from int, Fraction, decimal string or float (via its repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def exact(x: Fraction) -> Time:
    """Collapse integral fractions to ``int`` so the hot path stays in ints."""
    if isinstance(x, Fraction) and x.denominator == 1:
        return x.numerator
    return x


def span(later: Time, earlier: Time) -> Time:
    """Signed wrap-safe difference ``later - earlier`` between two local readings."""
    return (later - earlier + HALF_WRAP) % WRAP - HALF_WRAP


def shift(t: Time, delta: Time) -> Time:
    """Local reading ``delta`` after ``t`` (negative ``delta`` goes back)."""
    return (t + delta) % WRAP


# ---------------------------------------------------------------------------
# clocks


@dataclass(frozen=True)
class ClockModel:
    """Affine hardware timer: ``local = rate * real + offset`` modulo the wrap period."""

    owner: NodeId
    rate: Time = 1
    offset: Time = 0

    def read(self, t: Time) -> Time:
        return (self.rate * t + self.offset) % WRAP

    def real_of(self, local: Time, t_now: Time) -> Time:
        """Real time at which this timer read ``local``, anchored at the current instant."""
        back = span(self.read(t_now), local)
        if self.rate == 1:
            return t_now - back
        return exact(Fraction(t_now) - Fraction(back) / self.rate)

    def check_drift(self, rho: Fraction) -> None:
        if not (1 - rho) <= self.rate <= (1 + rho):
            raise ConfigError(f"clock rate {self.rate} of node {self.owner} outside [1-rho, 1+rho]")


def clock_read(clock: ClockModel, t: Time) -> Time:
    if t < 0:
        raise ValueError("real time must be non-negative")
    return clock.read(t)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ProtocolConstants:
    n: int
    f: int
    d: Time
    delta: Time
    pi: Time
    rho: Fraction
    tau_skew: Time
    phi: Time
    d_agr: Time
    d_zero: Time
    d_rmv: Time
    d_val: Time
    d_node: Time
    d_reset: Time
    d_stb: Time

    def table(self) -> List[Tuple[str, Time]]:
        return [
            ("tau_skew", self.tau_skew),
            ("phi", self.phi),
            ("d_agr", self.d_agr),
            ("d_zero", self.d_zero),
            ("d_rmv", self.d_rmv),
            ("d_val", self.d_val),
            ("d_node", self.d_node),
            ("d_reset", self.d_reset),
            ("d_stb", self.d_stb),
        ]


def derive_constants(n: int, f: int, d, delta=None, pi=None, rho=0) -> ProtocolConstants:
    """Full timing cascade from the topology and the message-delay bound ``d``.

    When ``delta``/``pi`` are omitted, ``delta = 0.9 d`` and ``pi = 0.1 d`` at zero
    drift (adjusted by the drift factor otherwise).
    """
    if f < 0 or n <= 3 * f:
        raise ConfigError(f"invalid topology n={n}, f={f}: need n > 3f")
    d = as_rational(d)
    rho = as_rational(rho)
    if not 0 <= rho < 1:
        raise ConfigError("rho must lie in [0, 1)")
    if delta is None and pi is None:
        delta = d * Fraction(9, 10) / (1 + rho)
        pi = d * Fraction(1, 10) / (1 + rho)
    elif delta is None or pi is None:
        raise ConfigError("delta and pi must be given together")
    delta, pi = as_rational(delta), as_rational(pi)
    if d <= 0 or delta <= 0 or pi <= 0:
        raise ConfigError("all spans must be positive")
    if (delta + pi) * (1 + rho) != d:
        raise ConfigError(f"inconsistent d={d}: (delta+pi)(1+rho) = {(delta + pi) * (1 + rho)}")
    tau_skew = 6 * d
    phi = tau_skew + 2 * d
    d_agr = (2 * f + 1) * phi
    d_zero = 13 * d
    d_rmv = d_agr + d_zero
    d_val = 15 * d + 2 * d_rmv
    d_node = d_val + d_agr
    d_reset = 20 * d + 4 * d_rmv
    d_stb = 2 * d_reset
    return ProtocolConstants(
        n=n, f=f, d=exact(d), delta=exact(delta), pi=exact(pi), rho=rho,
        tau_skew=exact(tau_skew), phi=exact(phi), d_agr=exact(d_agr), d_zero=exact(d_zero),
        d_rmv=exact(d_rmv), d_val=exact(d_val), d_node=exact(d_node),
        d_reset=exact(d_reset), d_stb=exact(d_stb),
    )


# ---------------------------------------------------------------------------
# messages


class Kind(enum.IntEnum):
    INITIATOR = 0
    SUPPORT = 1
    APPROVE = 2
    READY = 3
    B_INIT = 4
    B_ECHO = 5
    B_INIT2 = 6
    B_ECHO2 = 7

    @property
    def is_broadcast(self) -> bool:
        return self >= Kind.B_INIT


class Message(NamedTuple):
    """One wire message.  ``origin``/``round`` are only meaningful for broadcast kinds.

    The sender is stamped by the transport and cannot be chosen by the adversary.
    """

    kind: Kind
    sender: NodeId
    general: NodeId
    value: Value
    origin: NodeId = -1
    round: int = 0

    def describe(self) -> Dict[str, object]:
        out = {"kind": self.kind.name, "sender": self.sender, "G": self.general, "m": self.value.hex()}
        if self.kind.is_broadcast:
            out["p"] = self.origin
            out["k"] = self.round
        return out


# ---------------------------------------------------------------------------
# timestamped state


class TimestampedLog:
    """Arrival-stamped message log, deduplicated on the full message.

    ``keep="first"`` ignores repeats (broadcast layer); ``keep="latest"`` refreshes the
    arrival stamp so that sliding windows ending at "now" see the newest copy.
    Entries are indexed by everything but the sender for fast quorum counting.
    """

    __slots__ = ("keep", "_index")

    def __init__(self, keep: str = "first"):
        self.keep = keep
        self._index: Dict[tuple, Dict[NodeId, Time]] = {}

    @staticmethod
    def key(msg: Message) -> tuple:
        return (msg.kind, msg.value, msg.origin, msg.round)

    def add(self, arrival: Time, msg: Message) -> bool:
        senders = self._index.setdefault(self.key(msg), {})
        if msg.sender in senders and self.keep == "first":
            return False
        senders[msg.sender] = arrival
        return True

    def senders(self, kind: Kind, value: Value, origin: NodeId = -1, rnd: int = 0) -> Dict[NodeId, Time]:
        return self._index.get((kind, value, origin, rnd), {})

    def values(self, kind: Kind) -> List[Value]:
        return [k[1] for k, v in self._index.items() if k[0] == kind and v]

    def entries(self) -> Iterator[Tuple[Time, Message]]:
        for (kind, value, origin, rnd), senders in self._index.items():
            for s, a in senders.items():
                yield a, Message(kind, s, -1, value, origin, rnd)

    def __len__(self) -> int:
        return sum(len(v) for v in self._index.values())

    def __bool__(self) -> bool:
        return any(self._index.values())

    def decay(self, now: Time, horizon: Time) -> None:
        """Drop entries older than ``horizon`` or stamped in the future."""
        empty = []
        for key, senders in self._index.items():
            stale = [s for s, a in senders.items() if not 0 <= span(now, a) <= horizon]
            for s in stale:
                del senders[s]
            if not senders:
                empty.append(key)
        for key in empty:
            del self._index[key]

    def purge(self, value: Value, kinds=None) -> None:
        for key in [k for k in self._index if k[1] == value and (kinds is None or k[0] in kinds)]:
            del self._index[key]

    def clear(self) -> None:
        self._index.clear()


class HistoryCell:
    """A variable that remembers its recent past.

    ``at(now, lookback)`` answers "what did this hold at ``now - lookback``" for any
    lookback up to ``horizon``.  Older changes are pruned except the one still in
    force at the horizon.
    """

    __slots__ = ("horizon", "changes")

    def __init__(self, horizon: Time, changes: Optional[List[Tuple[Time, object]]] = None):
        self.horizon = horizon
        self.changes: List[Tuple[Time, object]] = changes or []

    @property
    def current(self):
        return self.changes[-1][1] if self.changes else None

    def set(self, now: Time, value) -> None:
        ch = self.changes
        while ch and span(now, ch[-1][0]) < 0:
            ch.pop()
        if ch and ch[-1][1] == value:
            return
        if ch and ch[-1][0] == now:
            ch[-1] = (now, value)
        else:
            ch.append((now, value))
        self.prune(now)

    def expire(self, now: Time, at: Time) -> None:
        """Clear the value as of local time ``at``, clamped between the last change and ``now``."""
        ch = self.changes
        if not ch or ch[-1][1] is None:
            return
        if span(now, at) < 0:
            at = now
        if span(at, ch[-1][0]) < 0:
            at = ch[-1][0]
        if ch[-1][0] == at:
            ch[-1] = (at, None)
        else:
            ch.append((at, None))
        self.prune(now)

    def prune(self, now: Time) -> None:
        ch = self.changes
        cut = 0
        for i in range(len(ch) - 1):
            if span(now, ch[i + 1][0]) > self.horizon:
                cut = i + 1
            else:
                break
        if cut:
            del ch[:cut]
        if len(ch) == 1 and ch[0][1] is None and span(now, ch[0][0]) > self.horizon:
            ch.clear()

    def at(self, now: Time, lookback: Time):
        if lookback > self.horizon:
            raise ValueError(f"lookback {lookback} exceeds retained horizon {self.horizon}")
        q = shift(now, -lookback)
        for set_at, value in reversed(self.changes):
            if span(q, set_at) >= 0 and span(now, set_at) >= 0:
                return value
        return None

    def drop_future(self, now: Time) -> None:
        self.changes = [c for c in self.changes if span(now, c[0]) >= 0]

    def __bool__(self) -> bool:
        return bool(self.changes)


def history_at(cell: HistoryCell, now: Time, lookback: Time):
    return cell.at(now, lookback)


class Outbox:
    """Collects what a protocol step wants done: messages to send to all, and trace events."""

    __slots__ = ("messages", "events")

    def __init__(self):
        self.messages: List[Message] = []
        self.events: List[Tuple[str, dict]] = []

    def send(self, msg: Message) -> None:
        self.messages.append(msg)

    def event(self, kind: str, **payload) -> None:
        self.events.append((kind, payload))
