"""Message-driven reliable broadcast anchored at a local-time estimate.

Rounds are not timed: every threshold is re-checked as messages arrive, and the
anchor only bounds how late each step may still happen (``2k``, ``2k+1`` and
``2k+2`` phases after the anchor for echo, init' and echo'/broadcasters).
Echo' relaying and the final accept through echo' are untimed.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Set, Tuple

from .core import Kind, Message, NodeId, Outbox, ProtocolConstants, Time, TimestampedLog, Value, span

Triple = Tuple[NodeId, Value, int]


class _Record:
    __slots__ = ("sent_echo", "sent_init2", "sent_echo2", "accepted")

    def __init__(self):
        self.sent_echo: Optional[Time] = None
        self.sent_init2: Optional[Time] = None
        self.sent_echo2: Optional[Time] = None
        self.accepted: Optional[Time] = None


class BroadcastInstance:
    """Per-node broadcast state for all triples ``(p, m, k)`` under one General."""

    def __init__(self, owner: NodeId, general: NodeId, consts: ProtocolConstants):
        self.owner = owner
        self.general = general
        self.n = consts.n
        self.f = consts.f
        self.phi = consts.phi
        self.horizon = (2 * consts.f + 3) * consts.phi
        self.max_round = consts.f + 1
        self.anchor: Optional[Time] = None
        self.log = TimestampedLog(keep="first")
        self.pending: List[Tuple[Time, Message]] = []
        self.records: Dict[Triple, _Record] = {}
        self.accepted: Dict[Triple, Time] = {}
        self.broadcasters: Dict[NodeId, Time] = {}

    def is_idle(self) -> bool:
        return self.anchor is None and not self.pending and not self.records and not self.log and not self.broadcasters

    # -- inputs ---------------------------------------------------------

    def set_anchor(self, anchor: Optional[Time], now: Time, out: Outbox) -> None:
        """Install the anchor and process everything buffered while it was missing."""
        self.anchor = anchor
        if anchor is None or not self.pending:
            return
        buffered, self.pending = self.pending, []
        for _, msg in buffered:
            self.receive(msg, now, out)

    def invoke(self, value: Value, k: int, now: Time, out: Outbox) -> None:
        """Broadcast ``(owner, value, k)``: init goes to every node, this one included."""
        out.send(Message(Kind.B_INIT, self.owner, self.general, value, self.owner, k))
        since = None if self.anchor is None else span(now, self.anchor)
        out.event("bm_invoke", p=self.owner, m=value, k=k, since=since)

    def receive(self, msg: Message, now: Time, out: Outbox) -> None:
        if not 1 <= msg.round <= self.max_round or not 0 <= msg.origin < self.n:
            return
        if msg.kind == Kind.B_INIT and msg.sender != msg.origin:
            return
        if self.anchor is None:
            self.pending.append((now, msg))
            return
        if not self.log.add(now, msg):
            return
        self._evaluate(msg.origin, msg.value, msg.round, now, out)

    # -- blocks W..Z ----------------------------------------------------

    def _evaluate(self, p: NodeId, m: Value, k: int, now: Time, out: Outbox) -> None:
        rec = self.records.get((p, m, k))
        if rec is None:
            rec = self.records[(p, m, k)] = _Record()
        since = span(now, self.anchor)
        lo, hi = self.n - 2 * self.f, self.n - self.f
        log = self.log
        phi = self.phi

        if rec.sent_echo is None and since <= 2 * k * phi and p in log.senders(Kind.B_INIT, m, p, k):
            rec.sent_echo = now
            out.send(Message(Kind.B_ECHO, self.owner, self.general, m, p, k))

        if since <= (2 * k + 1) * phi:
            echoes = len(log.senders(Kind.B_ECHO, m, p, k))
            if echoes >= lo and rec.sent_init2 is None:
                rec.sent_init2 = now
                out.send(Message(Kind.B_INIT2, self.owner, self.general, m, p, k))
            if echoes >= hi and rec.accepted is None:
                self._accept(rec, p, m, k, now, since, "X", out)

        if since <= (2 * k + 2) * phi:
            inits = len(log.senders(Kind.B_INIT2, m, p, k))
            if inits >= lo and p not in self.broadcasters:
                self.broadcasters[p] = now
                out.event("broadcaster", p=p, since=since)
            if inits >= hi and rec.sent_echo2 is None:
                rec.sent_echo2 = now
                out.send(Message(Kind.B_ECHO2, self.owner, self.general, m, p, k))

        echoes2 = len(log.senders(Kind.B_ECHO2, m, p, k))
        if echoes2 >= lo and rec.sent_echo2 is None:
            rec.sent_echo2 = now
            out.send(Message(Kind.B_ECHO2, self.owner, self.general, m, p, k))
        if echoes2 >= hi and rec.accepted is None:
            self._accept(rec, p, m, k, now, since, "Z", out)

    def _accept(self, rec: _Record, p, m, k, now, since, line, out: Outbox) -> None:
        rec.accepted = now
        self.accepted[(p, m, k)] = now
        out.event("accept", p=p, m=m, k=k, since=since, line=line)

    # -- cleanup --------------------------------------------------------

    def cleanup(self, now: Time) -> None:
        """Forget anything older than ``(2f+3)`` phases, and anything stamped in the future."""
        h = self.horizon

        def fresh(t):
            return t is not None and 0 <= span(now, t) <= h

        self.log.decay(now, h)
        if self.pending:
            self.pending = [(a, m) for a, m in self.pending if fresh(a)]
        for key in list(self.records):
            rec = self.records[key]
            for slot in _Record.__slots__:
                if getattr(rec, slot) is not None and not fresh(getattr(rec, slot)):
                    setattr(rec, slot, None)
            if rec.sent_echo is None and rec.sent_init2 is None and rec.sent_echo2 is None and rec.accepted is None:
                p, m, k = key
                if not any(self.log.senders(kind, m, p, k) for kind in (Kind.B_INIT, Kind.B_ECHO, Kind.B_INIT2, Kind.B_ECHO2)):
                    del self.records[key]
        for key in [k for k, t in self.accepted.items() if not fresh(t)]:
            del self.accepted[key]
        for p in [p for p, t in self.broadcasters.items() if not fresh(t)]:
            del self.broadcasters[p]

    def accepted_chains(self, exclude: NodeId) -> Dict[Value, Dict[int, Set[NodeId]]]:
        """``value -> round -> {p}`` over accepted triples whose broadcaster is not ``exclude``."""
        out: Dict[Value, Dict[int, Set[NodeId]]] = {}
        for (p, m, k) in self.accepted:
            if p != exclude:
                out.setdefault(m, {}).setdefault(k, set()).add(p)
        return out


# functional aliases matching the operation names used in docs and tests

def bm_invoke(inst: BroadcastInstance, m: Value, k: int, now: Time) -> Outbox:
    out = Outbox()
    inst.invoke(m, k, now, out)
    return out


def bm_receive(inst: BroadcastInstance, msg: Message, now: Time) -> Outbox:
    out = Outbox()
    inst.receive(msg, now, out)
    return out


def bm_cleanup(inst: BroadcastInstance, now: Time) -> None:
    inst.cleanup(now)
