"""Deterministic discrete-event simulation of the protocol stack.

Events are ordered by ``(fire_at, seq)``.  Message delays are drawn from a
counter-based generator keyed by ``(seed, sender, receiver, send count)`` so that
unrelated events never perturb each other's draws.  Nodes tick every ``d/4`` only
while some state of theirs is waiting on time; an idle node is caught up lazily
when its next message arrives.
"""

from __future__ import annotations

import heapq
import json
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

from .adversary import Send, Strategy, View, make_strategy
from .agreement import GeneralState, Phase, ProtocolStack
from .core import (
    TICKS_PER_D,
    WRAP,
    ClockModel,
    HistoryCell,
    Kind,
    Message,
    NodeId,
    Outbox,
    ProtocolConstants,
    Time,
    Value,
    shift,
)
from .scenario import Action, ScenarioConfig

_MASK = (1 << 64) - 1
TICK_DIVISOR = 4

DELIVER, TICK, ACTION, WAKE = 0, 1, 2, 3
_RUNNING, _FAULTY = "running", "faulty"


class SimulationOverflow(RuntimeError):
    """The event queue outgrew the configured bound (runaway flooding)."""


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def delay_draw(seed: int, sender: NodeId, receiver: NodeId, count: int, bound: int) -> int:
    """Uniform integer in ``[0, bound]`` determined by the key alone."""
    h = splitmix64(splitmix64(splitmix64(seed & _MASK) ^ (sender << 20 | receiver)) ^ count)
    return h % (bound + 1)


class SimEvent(NamedTuple):
    fire_at: int
    seq: int
    kind: int
    target: object
    data: object


class TraceEvent(NamedTuple):
    t_real: Time
    node: int
    local_time: Time
    kind: str
    payload: dict


@dataclass
class Trace:
    events: List[TraceEvent]

    def of_kind(self, *kinds: str) -> List[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    @property
    def meta(self) -> dict:
        for e in self.events:
            if e.kind == "meta":
                return e.payload
        return {}

    def lines(self) -> Iterable[str]:
        for e in self.events:
            yield encode_event(e)

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())


# ---------------------------------------------------------------------------
# trace serialization

_FRACTION = re.compile(r"^-?\d+/\d+$")
VALUE_KEYS = ("m", "im")


def _encode_value(key: str, v):
    if isinstance(v, bytes):
        return v.hex()
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}" if v.denominator != 1 else v.numerator
    if isinstance(v, dict):
        return {k: _encode_value(k, x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_encode_value(key, x) for x in v]
    return v


def _decode_value(key: str, v):
    if key in VALUE_KEYS and isinstance(v, str):
        return bytes.fromhex(v)
    if isinstance(v, str) and _FRACTION.match(v):
        return Fraction(v)
    if isinstance(v, dict):
        return {k: _decode_value(k, x) for k, x in v.items()}
    if isinstance(v, list):
        return [_decode_value(key, x) for x in v]
    return v


def encode_event(e: TraceEvent) -> str:
    record = {
        "t_real": _encode_value("t_real", e.t_real),
        "node": e.node,
        "local_time": _encode_value("local_time", e.local_time),
        "kind": e.kind,
        "payload": {k: _encode_value(k, e.payload[k]) for k in sorted(e.payload)},
    }
    return json.dumps(record, separators=(",", ":"))


class TraceFormatError(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"trace line {lineno}: {reason}")
        self.lineno = lineno


def decode_line(line: str, lineno: int = 0) -> TraceEvent:
    try:
        r = json.loads(line)
        payload = {k: _decode_value(k, v) for k, v in r["payload"].items()}
        return TraceEvent(_decode_value("t_real", r["t_real"]), int(r["node"]),
                          _decode_value("local_time", r["local_time"]), str(r["kind"]), payload)
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise TraceFormatError(lineno, str(exc)) from None


def parse_trace(text: str) -> Trace:
    return Trace([decode_line(line, i) for i, line in enumerate(text.splitlines(), 1) if line.strip()])


def read_trace(path) -> Trace:
    return parse_trace(Path(path).read_text())


# ---------------------------------------------------------------------------
# nodes


@dataclass
class _Node:
    id: NodeId
    clock: ClockModel
    mode: str
    stacks: Dict[NodeId, ProtocolStack] = field(default_factory=dict)
    ticking: bool = False
    strategy: Optional[Strategy] = None
    view: Optional[View] = None


@dataclass
class _NetFault:
    start: int
    end: int
    rule: str
    param: Fraction


class Simulation:
    """One run of a scenario.  Use :func:`sim_run` for the common case."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.consts: ProtocolConstants = cfg.validate()
        self.n = cfg.n
        self.seed = cfg.seed & _MASK
        self.rng = random.Random(splitmix64(self.seed ^ 0x5EED))
        self.delay_bound = int(self.consts.delta)
        self.direct_window = None if cfg.direct_window is None else cfg.ticks(cfg.direct_window, "direct_window")
        self.tick_period = max(1, int(self.consts.d) // TICK_DIVISOR)
        self.queue: List[tuple] = []
        self.seq = 0
        self.now: int = 0
        self.events: List[TraceEvent] = []
        self.counts = [[0] * self.n for _ in range(self.n)]
        self.faults: List[_NetFault] = []
        self.nodes = [self._make_node(i) for i in range(self.n)]
        self.faulty_ids = tuple(i for i in range(self.n) if self.nodes[i].mode == _FAULTY)
        self.observers = [nd for nd in self.nodes if nd.strategy is not None and nd.strategy.reactive]

    # -- setup -------------------------------------------------------------

    def _make_clock(self, i: int, rng: random.Random) -> ClockModel:
        cfg = self.cfg
        rate: Time = 1
        if cfg.drift and cfg.rho > 0:
            step = rng.randint(-1000, 1000)
            rate = 1 + cfg.rho * Fraction(step, 1000)
        if cfg.wrap_clocks and i % 2 == 0:
            # close below the wrap point, so the counter wraps within the run
            offset = WRAP - rng.randint(0, cfg.horizon)
        else:
            offset = rng.randrange(WRAP)
        return ClockModel(i, rate, offset)

    def _make_node(self, i: int) -> _Node:
        role = self.cfg.role(i)
        node = _Node(i, self._make_clock(i, self.rng), _RUNNING if role.kind == "correct" else _FAULTY)
        if role.strategy is not None:
            spec = self.cfg.strategies[role.strategy]
            node.strategy = make_strategy(spec.kind, dict(spec.params))
        return node

    def _view(self, node: _Node) -> View:
        correct = tuple(i for i in range(self.n) if i not in self.faulty_ids)
        rng = random.Random(splitmix64(self.seed ^ (0xAD0 + node.id)))
        return View(node.id, self.n, self.cfg.f, self.cfg.general, self.consts, correct, self.faulty_ids, rng)

    def stack(self, node: _Node, general: NodeId) -> ProtocolStack:
        st = node.stacks.get(general)
        if st is None:
            gs = GeneralState(self.consts) if general == node.id else None
            st = node.stacks[general] = ProtocolStack(node.id, general, self.consts, gs, self.direct_window)
        return st

    # -- queue -------------------------------------------------------------

    def push(self, t: int, kind: int, target, data=None) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (t, self.seq, kind, target, data))
        if len(self.queue) > self.cfg.max_queue:
            raise SimulationOverflow(f"event queue exceeded {self.cfg.max_queue} entries at t={t}")

    # -- trace -------------------------------------------------------------

    def record(self, node: int, local: Time, kind: str, payload: dict) -> None:
        self.events.append(TraceEvent(self.now, node, local, kind, payload))

    def _emit(self, node: _Node, general: NodeId, local: Time, out: Outbox) -> None:
        clock = node.clock
        for kind, payload in out.events:
            payload = dict(payload)
            payload["G"] = general
            if payload.get("anchor") is not None:
                payload["anchor_rt"] = clock.real_of(payload["anchor"], self.now)
            self.record(node.id, local, kind, payload)
        for msg in out.messages:
            self.send(node.id, msg)

    # -- network -----------------------------------------------------------

    def _fault_at(self, t: int) -> Optional[_NetFault]:
        for w in self.faults:
            if w.start <= t < w.end:
                return w
        return None

    def _transmit(self, frm: NodeId, to: NodeId, msg: Message, delay: Optional[int] = None) -> None:
        count = self.counts[frm][to]
        self.counts[frm][to] = count + 1
        t = self.now
        fault = self._fault_at(t) if self.faults else None
        if fault is not None:
            h = delay_draw(self.seed ^ 0xFA17, frm, to, count, 999)
            if fault.rule == "drop":
                if h < fault.param * 1000:
                    return
            elif fault.rule == "delay":
                extra = int(fault.param * self.consts.d)
                self.push(t + delay_draw(self.seed, frm, to, count, extra), DELIVER, to, msg)
                return
            elif fault.rule == "dup":
                self.push(t + delay_draw(self.seed ^ 1, frm, to, count, self.delay_bound), DELIVER, to, msg)
        if delay is None:
            u = delay_draw(self.seed, frm, to, count, self.delay_bound)
        else:
            u = min(max(int(delay), 0), self.delay_bound)
        self.push(t + u, DELIVER, to, msg)

    def send(self, frm: NodeId, msg: Message) -> None:
        """Send ``msg`` from a running node to every node, itself included."""
        for to in range(self.n):
            self._transmit(frm, to, msg)
        for nd in self.observers:
            if nd.id != frm and nd.mode == _FAULTY:
                self._adversary_sends(nd, nd.strategy.observe(nd.view, msg, self.now))

    def _adversary_sends(self, node: _Node, sends: List[Send]) -> None:
        for s in sends:
            if 0 <= s.to < self.n:
                # the transport stamps the true sender
                self._transmit(node.id, s.to, s.msg._replace(sender=node.id), s.delay)
        self._schedule_wakeups(node)

    def _schedule_wakeups(self, node: _Node) -> None:
        view = node.view
        if view.wakeups:
            for t in view.wakeups:
                if t >= self.now:
                    self.push(t, WAKE, node.id)
            view.wakeups.clear()

    # -- ticks -------------------------------------------------------------

    def _ensure_tick(self, node: _Node) -> None:
        if node.ticking or node.mode != _RUNNING:
            return
        if any(st.needs_ticks() for st in node.stacks.values()):
            p = self.tick_period
            phase = (node.id * p) // self.n
            nxt = ((self.now - phase) // p + 1) * p + phase
            node.ticking = True
            self.push(nxt, TICK, node.id)

    def _tick(self, node: _Node) -> None:
        node.ticking = False
        if node.mode != _RUNNING:
            return
        local = node.clock.read(self.now)
        for g, st in list(node.stacks.items()):
            out = Outbox()
            st.tick(local, out)
            self._drop_orphan_anchor(st, out)
            self._emit(node, g, local, out)
        self._ensure_tick(node)

    def _catch_up(self, node: _Node, local: Time) -> None:
        for g, st in list(node.stacks.items()):
            out = Outbox()
            st.tick(local, out)
            self._drop_orphan_anchor(st, out)
            self._emit(node, g, local, out)

    def _drop_orphan_anchor(self, st: ProtocolStack, out: Outbox) -> None:
        if self.cfg.mode == "agreement" and st.agr.phase is Phase.IDLE and st.bcast.anchor is not None:
            st.reset("orphan_anchor", out)

    # -- handlers ----------------------------------------------------------

    def _deliver(self, to: NodeId, msg: Message) -> None:
        node = self.nodes[to]
        if node.mode != _RUNNING:
            return
        local = node.clock.read(self.now)
        if not node.ticking:
            self._catch_up(node, local)
        st = self.stack(node, msg.general)
        out = Outbox()
        st.on_message(msg, local, out)
        self._emit(node, msg.general, local, out)
        self._ensure_tick(node)

    def _wake(self, node_id: NodeId) -> None:
        node = self.nodes[node_id]
        if node.mode != _FAULTY or node.strategy is None:
            return
        self._adversary_sends(node, node.strategy.step(node.view, self.now))

    def _action(self, a: Action) -> None:
        verb, args = a.verb, a.args
        if verb == "initiate":
            self._initiate(args[0].encode())
        elif verb == "corrupt":
            sim_inject_transient(self, [nd.id for nd in self.nodes if nd.mode == _RUNNING], in_flight=True)
        elif verb == "netfault":
            dur = self.cfg.ticks(args[0], "netfault duration")
            rule = args[1] if len(args) > 1 else "drop"
            param = Fraction(args[2]) if len(args) > 2 else Fraction(1)
            self.faults.append(_NetFault(self.now, self.now + dur, rule, param))
            self.record(-1, self.now, "netfault", {"until": self.now + dur, "rule": rule})
        elif verb == "recover":
            self._recover(int(args[0]))
        elif verb == "anchor":
            self._anchor(args)
        elif verb == "bcast":
            node = self.nodes[int(args[0])]
            if node.mode == _RUNNING:
                local = node.clock.read(self.now)
                st = self.stack(node, self.cfg.general)
                out = Outbox()
                st.bcast.invoke(args[1].encode(), int(args[2]), local, out)
                self._emit(node, self.cfg.general, local, out)
                self._ensure_tick(node)

    def _initiate(self, m: Value) -> None:
        g = self.nodes[self.cfg.general]
        if g.mode != _RUNNING:
            self.record(g.id, self.now, "initiate_skipped", {"G": g.id, "m": m})
            return
        local = g.clock.read(self.now)
        if not g.ticking:
            self._catch_up(g, local)
        st = self.stack(g, g.id)
        out = Outbox()
        st.initiate(m, local, out)
        self._emit(g, g.id, local, out)
        self._ensure_tick(g)

    def _anchor(self, args: Tuple[str, ...]) -> None:
        """Broadcast mode: hand nodes an anchor up to ``spread`` in the past."""
        who = args[0] if args else "all"
        spread = self.cfg.ticks(args[1], "anchor spread") if len(args) > 1 else 0
        ids = range(self.n) if who == "all" else [int(who)]
        for i in ids:
            node = self.nodes[i]
            if node.mode != _RUNNING:
                continue
            back = self.rng.randint(0, spread) if spread else 0
            local = node.clock.read(self.now)
            anchor = node.clock.read(max(0, self.now - back))
            st = self.stack(node, self.cfg.general)
            out = Outbox()
            st.bcast.anchor = None
            st.bcast.set_anchor(anchor, local, out)
            out.events.insert(0, ("anchor", {"anchor": anchor}))
            self._emit(node, self.cfg.general, local, out)
            self._ensure_tick(node)

    def _recover(self, i: int) -> None:
        node = self.nodes[i]
        if node.mode == _RUNNING:
            return
        node.mode = _RUNNING
        node.strategy = None
        self.observers = [nd for nd in self.observers if nd.id != i]
        self.record(i, node.clock.read(self.now), "recover", {})
        sim_inject_transient(self, [i], in_flight=False)

    # -- main loop -----------------------------------------------------------

    def run(self) -> Trace:
        cfg = self.cfg
        self.record(-1, 0, "meta", {
            "n": cfg.n, "f": cfg.f, "general": cfg.general, "seed": cfg.seed, "horizon": cfg.horizon,
            "mode": cfg.mode, "ticks_per_d": TICKS_PER_D,
        })
        for nd in self.nodes:
            if nd.strategy is not None:
                nd.view = self._view(nd)
                nd.strategy.start(nd.view)
                self._schedule_wakeups(nd)
        for a in cfg.script:
            self.push(a.t, ACTION, a)
        for i in range(self.n):
            role = cfg.role(i)
            if role.kind == "recovering":
                self.push(role.at, ACTION, Action(role.at, -1, "recover", (str(i),)))
        horizon = cfg.horizon
        queue = self.queue
        pop = heapq.heappop
        while queue:
            if queue[0][0] > horizon:
                break
            t, _, kind, target, data = pop(queue)
            self.now = t
            if kind == DELIVER:
                self._deliver(target, data)
            elif kind == TICK:
                self._tick(self.nodes[target])
            elif kind == ACTION:
                self._action(target)
            else:
                self._wake(target)
        self.now = horizon
        self.record(-1, horizon, "end", {})
        return Trace(self.events)


# ---------------------------------------------------------------------------
# transient faults

_POOL = (b"a", b"b", b"c", b"m", b"x", b"\x00")


def _rand_local(rng: random.Random, now: Time, consts: ProtocolConstants) -> int:
    span = 2 * consts.d_rmv + 10 * consts.d
    return int(shift(now, rng.randint(-span, consts.d_rmv)))


def _rand_cell(rng: random.Random, now: Time, consts: ProtocolConstants, horizon: Time) -> HistoryCell:
    cell = HistoryCell(horizon)
    times = sorted(rng.randint(-4 * consts.d, consts.d) for _ in range(rng.randint(0, 3)))
    for dt in times:
        value = None if rng.random() < 0.3 else _rand_local(rng, now, consts)
        cell.changes.append((int(shift(now, dt)), value))
    return cell


def _corrupt_stack(st: ProtocolStack, rng: random.Random, now: Time, consts: ProtocolConstants, n: int) -> None:
    d = consts.d
    init = st.init
    values = rng.sample(_POOL, rng.randint(1, 3))
    for m in values:
        init.w_broadcast[m] = _rand_cell(rng, now, consts, init.lookback)
        init.last_gm[m] = _rand_cell(rng, now, consts, init.lookback)
        if rng.random() < 0.5:
            init.ready[m] = _rand_local(rng, now, consts)
        if rng.random() < 0.3:
            init.sent_approve[m] = _rand_local(rng, now, consts)
        if rng.random() < 0.3:
            init.sent_ready[m] = _rand_local(rng, now, consts)
        if rng.random() < 0.2:
            init.ignore[m] = int(shift(now, rng.randint(-4 * d, 4 * d)))
        for kind in (Kind.SUPPORT, Kind.APPROVE, Kind.READY):
            for s in range(n):
                if rng.random() < 0.4:
                    at = int(shift(now, rng.randint(-6 * d, 2 * d)))
                    init.log.add(at, Message(kind, s, st.general, m))
        if rng.random() < 0.3:
            # phantom quorum: enough fresh readies to fire the accept at once
            init.ready[m] = now
            for s in rng.sample(range(n), n - consts.f):
                init.log.add(int(shift(now, -rng.randint(0, d))), Message(Kind.READY, s, st.general, m))
    init.last_g = _rand_cell(rng, now, consts, init.lookback)
    init.active = {k[1] for k in init.log._index} | set(init.ready)
    if rng.random() < 0.5:
        init.last_support = int(shift(now, rng.randint(-2 * d, 2 * d)))

    bc = st.bcast
    anchor = _rand_local(rng, now, consts) if rng.random() < 0.6 else None
    bc.anchor = anchor
    for _ in range(rng.randint(0, 12)):
        kind = rng.choice((Kind.B_INIT, Kind.B_ECHO, Kind.B_INIT2, Kind.B_ECHO2))
        p = rng.randrange(n)
        s = p if kind is Kind.B_INIT else rng.randrange(n)
        msg = Message(kind, s, st.general, rng.choice(_POOL), p, rng.randint(1, consts.f + 1))
        at = int(shift(now, rng.randint(-consts.phi, d)))
        if anchor is None:
            bc.pending.append((at, msg))
        else:
            bc.log.add(at, msg)
    for _ in range(rng.randint(0, 3)):
        key = (rng.randrange(n), rng.choice(_POOL), rng.randint(1, consts.f + 1))
        bc.accepted[key] = _rand_local(rng, now, consts)
    for p in range(n):
        if rng.random() < 0.2:
            bc.broadcasters[p] = _rand_local(rng, now, consts)

    agr = st.agr
    agr.phase = rng.choice(list(Phase))
    if agr.phase is Phase.IDLE:
        agr.anchor = None
    else:
        agr.anchor = anchor if anchor is not None else _rand_local(rng, now, consts)
        if rng.random() < 0.7:
            bc.anchor = agr.anchor
    if agr.phase is Phase.RETURNED:
        agr.value = rng.choice(_POOL + (None,))
        agr.returned_at = int(shift(now, rng.randint(-4 * d, 4 * d)))

    gs = st.general_state
    if gs is not None:
        gs.last_initiation = _rand_local(rng, now, consts) if rng.random() < 0.5 else None
        for m in rng.sample(_POOL, 2):
            gs.last_per_value[m] = _rand_local(rng, now, consts)
        if rng.random() < 0.5:
            gs.blocked_until = int(shift(now, rng.randint(-consts.d_reset, 2 * consts.d_reset)))
        if rng.random() < 0.3:
            gs.pending = (int(shift(now, rng.randint(-6 * d, d))), rng.choice(_POOL), {})


def sim_inject_transient(sim: Simulation, node_ids: List[NodeId], in_flight: bool = True) -> None:
    """Replace the state of ``node_ids`` (and optionally all in-flight traffic) with seeded junk."""
    rng = random.Random(splitmix64(sim.seed ^ 0xC0FFEE ^ (sim.now << 8) ^ len(node_ids)))
    consts = sim.consts
    n = sim.n
    for i in node_ids:
        node = sim.nodes[i]
        node.clock = sim._make_clock(i, rng)
        node.stacks.clear()
        generals = {sim.cfg.general} | ({rng.randrange(n)} if rng.random() < 0.3 else set())
        now = node.clock.read(sim.now)
        for g in sorted(generals):
            _corrupt_stack(sim.stack(node, g), rng, now, consts, n)
        node.ticking = False
        sim.record(i, now, "corrupt", {})
    if in_flight:
        kept = []
        for ev in sim.queue:
            t, seq, kind, target, data = ev
            if kind == DELIVER:
                data = _rand_message(rng, sim, data.sender)
            kept.append((t, seq, kind, target, data))
        sim.queue[:] = kept
        heapq.heapify(sim.queue)
        for _ in range(sim.cfg.phantoms):
            msg = _rand_message(rng, sim, rng.randrange(n))
            sim.push(sim.now + rng.randint(0, sim.delay_bound), DELIVER, rng.randrange(n), msg)
    for i in node_ids:
        node = sim.nodes[i]
        sim._catch_up(node, node.clock.read(sim.now))
        sim._ensure_tick(node)


def _rand_message(rng: random.Random, sim: Simulation, sender: NodeId) -> Message:
    kind = rng.choice(list(Kind))
    g = sim.cfg.general if rng.random() < 0.8 else rng.randrange(sim.n)
    m = rng.choice(_POOL)
    if kind.is_broadcast:
        p = sender if kind is Kind.B_INIT else rng.randrange(sim.n)
        return Message(kind, sender, g, m, p, rng.randint(1, sim.cfg.f + 1))
    return Message(kind, sender, g, m)


# ---------------------------------------------------------------------------
# functional entry points


def sim_run(cfg: ScenarioConfig) -> Trace:
    return Simulation(cfg).run()


def sim_send(sim: Simulation, frm: NodeId, msg: Message, t: Optional[int] = None) -> None:
    if t is not None:
        sim.now = t
    sim.send(frm, msg)
