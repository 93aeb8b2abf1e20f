"""Initiator primitive: converge on one candidate value per General plus a local anchor.

Blocks L..N are evaluated per value ``m`` whenever a relevant message arrives, and
again on every housekeeping tick while the previous evaluation executed some line.
Windows such as "in ``[tau - 2d, tau]``" are closed
intervals; cleanup thresholds are strict.
"""

from __future__ import annotations

from typing import Dict, Optional, Set, Tuple

from .core import (
    HistoryCell,
    Kind,
    Message,
    NodeId,
    Outbox,
    ProtocolConstants,
    Time,
    TimestampedLog,
    Value,
    shift,
    span,
)

_PRIMITIVE_KINDS = (Kind.SUPPORT, Kind.APPROVE, Kind.READY)


class InitiatorInstance:
    """State of one node's Initiator for one General."""

    def __init__(self, owner: NodeId, general: NodeId, consts: ProtocolConstants):
        self.owner = owner
        self.general = general
        self.n = consts.n
        self.f = consts.f
        self.d = consts.d
        self.d_rmv = consts.d_rmv
        self.last_g_expiry = consts.d_zero - 6 * consts.d
        self.last_gm_expiry = 2 * consts.d_rmv + 9 * consts.d
        self.lookback = 2 * consts.d
        self.log = TimestampedLog(keep="latest")
        self.w_broadcast: Dict[Value, HistoryCell] = {}
        self.last_gm: Dict[Value, HistoryCell] = {}
        self.last_g = HistoryCell(self.lookback)
        self.ready: Dict[Value, Time] = {}
        self.sent_approve: Dict[Value, Time] = {}
        self.sent_ready: Dict[Value, Time] = {}
        self.ignore: Dict[Value, Time] = {}
        self.last_support: Optional[Time] = None
        self.anchor_out: Optional[Tuple[Value, Time]] = None
        # values whose last evaluation executed some line; the windows only shrink
        # with time, so any other value stays quiet until a message arrives
        self.active: Set[Value] = set()
        self._touches = 0

    # -- helpers --------------------------------------------------------

    def _cell(self, table: Dict[Value, HistoryCell], m: Value) -> HistoryCell:
        cell = table.get(m)
        if cell is None:
            cell = table[m] = HistoryCell(self.lookback)
        return cell

    def _touch(self, m: Value, now: Time) -> None:
        self._touches += 1
        self._cell(self.last_gm, m).set(now, now)

    def is_idle(self) -> bool:
        return (
            not self.log
            and not any(c for c in self.w_broadcast.values())
            and not any(c for c in self.last_gm.values())
            and not self.last_g
            and not self.ready
            and not self.sent_approve
            and not self.sent_ready
            and not self.ignore
            and self.last_support is None
        )

    def fresh(self, m: Value, now: Time) -> bool:
        """Whether, ``d`` ago, no recording time was held and both last-times were empty."""
        d = self.d
        if any(cell.at(now, d) is not None for cell in self.w_broadcast.values()):
            return False
        cell = self.last_gm.get(m)
        if cell is not None and cell.at(now, d) is not None:
            return False
        return self.last_g.at(now, d) is None

    # -- block K --------------------------------------------------------

    def invoke(self, m: Value, now: Time, out: Outbox) -> bool:
        d = self.d
        reason = None
        if any(cell.current is not None for v, cell in self.w_broadcast.items() if v != m):
            reason = "recording"
        elif self.last_g.current is not None:
            reason = "last_g"
        elif self.last_support is not None and 0 <= span(now, self.last_support) <= d:
            reason = "recent_support"
        elif m in self.last_gm and self.last_gm[m].at(now, d) is not None:
            reason = "last_gm"
        if reason is not None:
            out.event("invoke_rejected", m=m, reason=reason)
            return False
        self._cell(self.w_broadcast, m).set(now, shift(now, -d))
        out.send(Message(Kind.SUPPORT, self.owner, self.general, m))
        self.last_support = now
        self._touch(m, now)
        out.event("invoke", m=m)
        return True

    # -- blocks L..N ----------------------------------------------------

    def receive(self, msg: Message, now: Time, out: Outbox) -> Optional[Tuple[Value, Time]]:
        m = msg.value
        start = self.ignore.get(m)
        if start is not None and 0 <= span(now, start) <= 3 * self.d:
            return None
        self.log.add(now, msg)
        return self.evaluate(m, now, out)

    def _ages(self, kind: Kind, m: Value, now: Time):
        return sorted(a for a in (span(now, t) for t in self.log.senders(kind, m).values()) if a >= 0)

    def evaluate(self, m: Value, now: Time, out: Outbox) -> Optional[Tuple[Value, Time]]:
        touches = self._touches
        result = self._lines(m, now, out)
        if self._touches != touches and result is None:
            self.active.add(m)
        else:
            self.active.discard(m)
        return result

    def _lines(self, m: Value, now: Time, out: Outbox) -> Optional[Tuple[Value, Time]]:
        d = self.d
        lo, hi = self.n - 2 * self.f, self.n - self.f

        ages = self._ages(Kind.SUPPORT, m, now)
        if len(ages) >= lo:
            alpha = ages[lo - 1]
            if alpha <= 4 * d:
                rec = shift(now, -(alpha + 2 * d))
                cell = self._cell(self.w_broadcast, m)
                if cell.current is None or span(rec, cell.current) > 0:
                    cell.set(now, rec)
                self._touch(m, now)
            if len(ages) >= hi and ages[hi - 1] <= 2 * d:
                if m not in self.sent_approve:
                    self.sent_approve[m] = now
                    out.send(Message(Kind.APPROVE, self.owner, self.general, m))
                self._touch(m, now)
                out.event("line", line="L4", m=m)

        ages = self._ages(Kind.APPROVE, m, now)
        if len(ages) >= lo and ages[lo - 1] <= 5 * d:
            self.ready[m] = now
            self._touch(m, now)
            out.event("line", line="M2", m=m)
        if len(ages) >= hi and ages[hi - 1] <= 3 * d:
            if m not in self.sent_ready:
                self.sent_ready[m] = now
                out.send(Message(Kind.READY, self.owner, self.general, m))
            self._touch(m, now)
            out.event("line", line="M4", m=m)

        if m in self.ready:
            count = len(self.log.senders(Kind.READY, m))
            if count >= lo:
                if m not in self.sent_ready:
                    self.sent_ready[m] = now
                    out.send(Message(Kind.READY, self.owner, self.general, m))
                self._touch(m, now)
            if count >= hi:
                return self._accept(m, now, out)
        return None

    def _accept(self, m: Value, now: Time, out: Outbox) -> Optional[Tuple[Value, Time]]:
        cell = self.w_broadcast.get(m)
        anchor = cell.current if cell is not None else None
        for c in self.w_broadcast.values():
            c.set(now, None)
        self.log.purge(m)
        self.ignore[m] = now
        self.sent_approve.pop(m, None)
        self.sent_ready.pop(m, None)
        self._touch(m, now)
        self.last_g.set(now, now)
        out.event("line", line="N4", m=m)
        if anchor is None:
            out.event("anomaly", what="N4 without recording time", m=m)
            return None
        self.anchor_out = (m, anchor)
        out.event("iaccept", m=m, anchor=anchor)
        return m, anchor

    # -- housekeeping ---------------------------------------------------

    def tick(self, now: Time, out: Outbox) -> Optional[Tuple[Value, Time]]:
        self.cleanup(now)
        result = None
        for m in sorted(self.active):
            res = self.evaluate(m, now, out)
            if res is not None and result is None:
                result = res
        return result

    def cleanup(self, now: Time) -> None:
        """Decay everything by age and drop future stamps.

        Expired history cells are cleared as of the instant they went stale, so that
        look-back queries answer the same whether or not this ran at that instant.
        """
        d_rmv = self.d_rmv

        def stale(t, horizon):
            return not 0 <= span(now, t) <= horizon

        def expire(cell: HistoryCell, horizon) -> None:
            cell.drop_future(now)
            v = cell.current
            if v is not None and stale(v, horizon):
                cell.expire(now, shift(v, horizon + 1) if span(now, v) > 0 else now)
            cell.prune(now)

        self.log.decay(now, d_rmv)
        for table, horizon in ((self.w_broadcast, d_rmv), (self.last_gm, self.last_gm_expiry)):
            for m in list(table):
                expire(table[m], horizon)
                if not table[m]:
                    del table[m]
        expire(self.last_g, self.last_g_expiry)
        for table, horizon in ((self.ready, d_rmv), (self.sent_approve, d_rmv), (self.sent_ready, d_rmv),
                               (self.ignore, 3 * self.d)):
            for m in [m for m, t in table.items() if stale(t, horizon)]:
                del table[m]
        if self.last_support is not None and stale(self.last_support, self.d):
            self.last_support = None

    def needs_ticks(self) -> bool:
        """Whether some line is still being re-executed; otherwise cleanup may be lazy."""
        return bool(self.active)

    def reset_execution(self) -> None:
        """Drop everything tied to the finished execution; the rate-limiting last-times stay."""
        self.log.clear()
        self.w_broadcast.clear()
        self.ready.clear()
        self.sent_approve.clear()
        self.sent_ready.clear()
        self.ignore.clear()
        self.active.clear()
        self.anchor_out = None


def in_invoke(inst: InitiatorInstance, m: Value, now: Time) -> Outbox:
    out = Outbox()
    inst.invoke(m, now, out)
    return out


def in_receive(inst: InitiatorInstance, msg: Message, now: Time) -> Outbox:
    out = Outbox()
    inst.receive(msg, now, out)
    return out


def in_cleanup(inst: InitiatorInstance, now: Time) -> None:
    inst.cleanup(now)


def in_freshness(inst: InitiatorInstance, m: Value, now: Time) -> bool:
    return inst.fresh(m, now)
