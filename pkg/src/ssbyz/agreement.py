"""Agreement on a General's value: anchor from the Initiator, rounds through the broadcast layer.

A node's participation in one execution moves ``idle -> anchored -> returned`` and,
``3d`` after returning, back to ``idle`` with the Initiator execution data and the
broadcast instance wiped.  The General additionally runs :class:`GeneralState`,
which gates new initiations on spacing and on its own self-monitoring.
"""

from __future__ import annotations

import enum
from typing import Dict, List, Optional, Set

from .broadcast import BroadcastInstance
from .core import Kind, Message, NodeId, Outbox, ProtocolConstants, Time, Value, shift, span
from .initiator import InitiatorInstance


class Phase(enum.Enum):
    IDLE = "idle"
    ANCHORED = "anchored"
    RETURNED = "returned"


def has_distinct_chain(rounds: Dict[int, Set[NodeId]], r: int) -> bool:
    """Whether rounds ``1..r`` admit pairwise distinct representatives (bipartite matching)."""
    if any(not rounds.get(i) for i in range(1, r + 1)):
        return False
    owner: Dict[NodeId, int] = {}

    def augment(i: int, seen: Set[NodeId]) -> bool:
        for p in sorted(rounds[i]):
            if p in seen:
                continue
            seen.add(p)
            if p not in owner or augment(owner[p], seen):
                owner[p] = i
                return True
        return False

    return all(augment(i, set()) for i in range(1, r + 1))


# Longest anchor-to-i-accept lag that still decides directly.  Under a correct
# General the anchor may precede the invocation by d and the i-accept may come
# 4d after it, so a 4d window lets slow-path nodes miss the validity deadline.
DIRECT_WINDOW_D = 5


class AgreementInstance:
    """One node's view of the current execution for one General."""

    def __init__(self, owner: NodeId, general: NodeId, consts: ProtocolConstants,
                 direct_window: Optional[int] = None):
        self.owner = owner
        self.direct_window = DIRECT_WINDOW_D * consts.d if direct_window is None else direct_window
        self.general = general
        self.f = consts.f
        self.d = consts.d
        self.phi = consts.phi
        self.erase_after = (2 * consts.f + 1) * consts.phi + 3 * consts.d
        self.phase = Phase.IDLE
        self.anchor: Optional[Time] = None
        self.value: Optional[Value] = None
        self.iaccepted: Optional[Value] = None
        self.returned_at: Optional[Time] = None

    def on_iaccept(self, m: Value, anchor: Time, now: Time, bcast: BroadcastInstance, out: Outbox) -> None:
        if self.phase is Phase.RETURNED:
            out.event("iaccept_ignored", m=m, anchor=anchor)
            return
        if self.phase is Phase.ANCHORED:
            out.event("supersede", anchor=self.anchor)
        self.phase = Phase.ANCHORED
        self.anchor = anchor
        self.iaccepted = m
        self.value = None
        bcast.anchor = anchor
        out.event("anchor", m=m, anchor=anchor)
        if span(now, anchor) <= self.direct_window:
            self._decide(m, "R", 0, now, bcast, out)
        bcast.set_anchor(anchor, now, out)
        if self.phase is Phase.ANCHORED:
            self.on_accept(now, bcast, out)

    def on_accept(self, now: Time, bcast: BroadcastInstance, out: Outbox) -> None:
        if self.phase is not Phase.ANCHORED:
            return
        since = span(now, self.anchor)
        # the chain must extend the General's own value, which this node i-accepted
        rounds = bcast.accepted_chains(exclude=self.general).get(self.iaccepted)
        if not rounds:
            return
        for r in range(1, self.f + 1):
            if since <= (2 * r + 1) * self.phi and has_distinct_chain(rounds, r):
                self._decide(self.iaccepted, "S", r, now, bcast, out)
                return

    def _decide(self, m: Value, block: str, r: int, now: Time, bcast: BroadcastInstance, out: Outbox) -> None:
        self.value = m
        self.phase = Phase.RETURNED
        self.returned_at = now
        out.event("decide", m=m, im=self.iaccepted, anchor=self.anchor, block=block, r=r)
        bcast.invoke(m, r + 1, now, out)

    def _abort(self, block: str, r: int, now: Time, out: Outbox) -> None:
        self.value = None
        self.phase = Phase.RETURNED
        self.returned_at = now
        out.event("abort", im=self.iaccepted, anchor=self.anchor, block=block, r=r)

    def on_tick(self, now: Time, bcast: BroadcastInstance, out: Outbox) -> None:
        if self.phase is not Phase.ANCHORED:
            return
        since = span(now, self.anchor)
        if since < 0:
            return
        for r in range(1, self.f + 1):
            if since > (2 * r + 1) * self.phi and len(bcast.broadcasters) < r - 1:
                self._abort("T", r, now, out)
                return
        if since > (2 * self.f + 1) * self.phi:
            self._abort("U", self.f, now, out)

    def needs_reset(self, now: Time) -> Optional[str]:
        """Reason the execution data must be wiped now, if any."""
        if self.phase is Phase.RETURNED:
            age = span(now, self.returned_at)
            if age < 0 or age >= 3 * self.d:
                return "returned"
        elif self.phase is Phase.ANCHORED:
            age = span(now, self.anchor)
            if age < 0 or age > self.erase_after:
                return "stale_anchor"
        return None

    def reset(self) -> None:
        self.phase = Phase.IDLE
        self.anchor = None
        self.iaccepted = None
        self.value = None
        self.returned_at = None


class GeneralState:
    """The General's own gate on initiations: spacing, per-value spacing and back-off."""

    def __init__(self, consts: ProtocolConstants):
        self.d = consts.d
        self.d_zero = consts.d_zero
        self.d_val = consts.d_val
        self.d_reset = consts.d_reset
        self.last_initiation: Optional[Time] = None
        self.last_per_value: Dict[Value, Time] = {}
        self.blocked_until: Optional[Time] = None
        # pending self-check: (sent_at, value, {line: first completion time})
        self.pending: Optional[tuple] = None

    def check(self, m: Value, now: Time) -> Optional[str]:
        """Name of the first failing criterion, or ``None`` when an initiation is allowed."""
        self.cleanup(now)
        if self.last_initiation is not None and span(now, self.last_initiation) < self.d_zero:
            return "IG1"
        last = self.last_per_value.get(m)
        if last is not None and span(now, last) < self.d_val:
            return "IG2"
        if self.blocked_until is not None and span(now, self.blocked_until) < 0:
            return "IG3"
        return None

    def record(self, m: Value, now: Time) -> None:
        self.last_initiation = now
        self.last_per_value[m] = now
        self.pending = (now, m, {})

    def note_line(self, line: str, m: Value, now: Time) -> None:
        if self.pending is None or self.pending[1] != m or line not in ("L4", "M4", "N4"):
            return
        done = self.pending[2]
        if line not in done and span(now, self.pending[0]) >= 0:
            done[line] = now

    def tick(self, now: Time, out: Outbox) -> None:
        self.cleanup(now)
        if self.pending is None:
            return
        sent, m, done = self.pending
        if span(now, sent) <= 4 * self.d:
            return
        self.pending = None
        reached = {line: span(t, sent) for line, t in done.items()}

        def by(lines, limit):
            return any(line in reached and reached[line] <= limit for line in lines)

        missed = None
        if not by(("L4", "M4", "N4"), 2 * self.d):
            missed = ("L4", 2 * self.d)
        elif not by(("M4", "N4"), 3 * self.d):
            missed = ("M4", 3 * self.d)
        elif not by(("N4",), 4 * self.d):
            missed = ("N4", 4 * self.d)
        if missed is not None:
            self.blocked_until = shift(sent, missed[1] + self.d_reset)
            out.event("self_check_failed", m=m, line=missed[0], blocked_until=self.blocked_until)

    def cleanup(self, now: Time) -> None:
        if self.last_initiation is not None and span(now, self.last_initiation) < 0:
            self.last_initiation = None
        for m in [m for m, t in self.last_per_value.items() if not 0 <= span(now, t) < self.d_val]:
            del self.last_per_value[m]
        if self.blocked_until is not None:
            ahead = span(self.blocked_until, now)
            if ahead <= 0 or ahead > self.d_reset + 4 * self.d:
                self.blocked_until = None
        if self.pending is not None and span(now, self.pending[0]) < 0:
            self.pending = None

    def needs_ticks(self) -> bool:
        return self.pending is not None


class ProtocolStack:
    """Initiator, broadcast and agreement state of one node for one General, wired together."""

    def __init__(self, owner: NodeId, general: NodeId, consts: ProtocolConstants,
                 general_state: Optional[GeneralState] = None, direct_window: Optional[Time] = None):
        self.owner = owner
        self.general = general
        self.consts = consts
        self.init = InitiatorInstance(owner, general, consts)
        self.bcast = BroadcastInstance(owner, general, consts)
        self.agr = AgreementInstance(owner, general, consts, direct_window)
        self.general_state = general_state

    def needs_ticks(self) -> bool:
        """Whether anything here is waiting on time; idle stacks are caught up lazily via :meth:`tick`."""
        return (
            self.agr.phase is not Phase.IDLE
            or self.init.needs_ticks()
            or (self.general_state is not None and self.general_state.needs_ticks())
        )

    # -- entry points ---------------------------------------------------

    def initiate(self, m: Value, now: Time, out: Outbox) -> Optional[str]:
        """General side: gate, purge own primitive messages, then send the initiator message."""
        gs = self.general_state
        failed = gs.check(m, now)
        if failed is not None:
            out.event("initiate", m=m, ok=False, reason=failed)
            return failed
        self.init.log.clear()
        gs.record(m, now)
        out.send(Message(Kind.INITIATOR, self.owner, self.general, m))
        out.event("initiate", m=m, ok=True, reason=None)
        return None

    def on_message(self, msg: Message, now: Time, out: Outbox) -> None:
        kind = msg.kind
        if kind is Kind.INITIATOR:
            if msg.sender == self.general:
                start = len(out.events)
                self.init.invoke(msg.value, now, out)
                self._note_lines(out, start, now)
            return
        if kind.is_broadcast:
            before = len(self.bcast.accepted)
            self.bcast.receive(msg, now, out)
            if len(self.bcast.accepted) != before:
                self.agr.on_accept(now, self.bcast, out)
            return
        start = len(out.events)
        accepted = self.init.receive(msg, now, out)
        self._note_lines(out, start, now)
        if accepted is not None:
            self.agr.on_iaccept(accepted[0], accepted[1], now, self.bcast, out)

    def tick(self, now: Time, out: Outbox) -> None:
        start = len(out.events)
        accepted = self.init.tick(now, out)
        self._note_lines(out, start, now)
        if accepted is not None:
            self.agr.on_iaccept(accepted[0], accepted[1], now, self.bcast, out)
        self.bcast.cleanup(now)
        self.agr.on_tick(now, self.bcast, out)
        reason = self.agr.needs_reset(now)
        if reason is not None:
            self.reset(reason, out)
        if self.general_state is not None:
            self.general_state.tick(now, out)

    def reset(self, reason: str, out: Outbox) -> None:
        self.agr.reset()
        self.init.reset_execution()
        self.bcast = BroadcastInstance(self.owner, self.general, self.consts)
        out.event("reset", reason=reason)

    def _note_lines(self, out: Outbox, start: int, now: Time) -> None:
        gs = self.general_state
        if gs is None or gs.pending is None:
            return
        for kind, payload in out.events[start:]:
            if kind == "line":
                gs.note_line(payload["line"], payload["m"], now)


def ag_general_initiate(stack: ProtocolStack, m: Value, now: Time) -> Outbox:
    out = Outbox()
    stack.initiate(m, now, out)
    return out


def ag_on_initiator_msg(stack: ProtocolStack, msg: Message, now: Time) -> Outbox:
    out = Outbox()
    stack.on_message(msg, now, out)
    return out


def ag_on_iaccept(stack: ProtocolStack, m: Value, anchor: Time, now: Time) -> Outbox:
    out = Outbox()
    stack.agr.on_iaccept(m, anchor, now, stack.bcast, out)
    return out


def ag_on_tick(stack: ProtocolStack, now: Time) -> Outbox:
    out = Outbox()
    stack.tick(now, out)
    return out


def ag_cleanup(stack: ProtocolStack, now: Time) -> Outbox:
    out = Outbox()
    reason = stack.agr.needs_reset(now)
    if reason is not None:
        stack.reset(reason, out)
    return out


__all__: List[str] = [
    "AgreementInstance", "GeneralState", "Phase", "ProtocolStack", "has_distinct_chain",
    "ag_general_initiate", "ag_on_initiator_msg", "ag_on_iaccept", "ag_on_tick", "ag_cleanup",
]
