"""Post-hoc verification of run traces.

Every property is evaluated over the events of correct nodes that fall inside the
stable part of the run.  Real-time bounds are compared exactly (ticks, or
fractions under drift).  An obligation whose deadline lies past the horizon is
skipped rather than failed.

Executions are not labelled in the trace.  They are recovered per General and
value by single-linkage clustering of anchor real times at ``2*d_rmv - 3d``; the
same-value separation property guarantees legitimate executions are further apart.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .core import ProtocolConstants, Time
from .engine import Trace, TraceEvent
from .scenario import ScenarioConfig

INF = float("inf")
MAX_WITNESSES = 6

CORE_IDS = ("Agreement", "Validity", "Termination", "SingleReturn")
TIMELINESS_IDS = ("T1a", "T1b", "T1c", "T1d", "T2", "T3", "T4a", "T4b")
IA_IDS = ("IA-1A", "IA-1B", "IA-1C", "IA-1D", "IA-2", "IA-3A", "IA-3B", "IA-3C", "IA-4A", "IA-4B")
TPS_IDS = ("TPS-1", "TPS-2", "TPS-3", "TPS-4")
DIAGNOSTIC_IDS = ("D-m2-spacing", "D-m4-spacing", "D-before-support", "D-faulty-reset", "D-good-reset")


@dataclass
class Verdict:
    prop: str
    passed: bool = True
    checked: int = 0
    violations: int = 0
    witnesses: List[Tuple[TraceEvent, ...]] = field(default_factory=list)
    diagnostic: bool = False
    note: str = ""

    def fail(self, *events: TraceEvent) -> None:
        self.passed = False
        self.violations += 1
        if len(self.witnesses) < MAX_WITNESSES:
            self.witnesses.append(tuple(events))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{self.prop:<18} {status} checked={self.checked} violations={self.violations}"
        if self.note:
            text += f"  # {self.note}"
        return text


@dataclass(frozen=True)
class StabilityWindows:
    """``iota0``: network correct and ``n-f`` nodes continuously non-faulty from here on.

    ``iota1 = iota0 + d_stb``.  ``check_from`` is ``iota1``, or ``0`` for pristine runs
    (no corruption, no network fault, no recovering node), which are stable throughout.
    """

    iota0: Time
    iota1: Time
    check_from: Time
    pristine: bool


def stability_windows(trace: Trace, cfg: ScenarioConfig) -> StabilityWindows:
    consts = cfg.constants()
    disturbances = [0]
    for e in trace.events:
        if e.kind == "corrupt":
            disturbances.append(e.t_real)
        elif e.kind == "netfault":
            disturbances.append(e.payload["until"])
    nonfaulty_from = sorted(_correct_from(cfg, consts, i, grace=False) for i in range(cfg.n))
    quorum_at = nonfaulty_from[cfg.n - cfg.f - 1]
    iota0 = max(max(disturbances), quorum_at)
    pristine = len(disturbances) == 1 and all(cfg.role(i).kind != "recovering" for i in range(cfg.n))
    iota1 = iota0 + consts.d_stb
    return StabilityWindows(iota0, iota1, 0 if pristine else iota1, pristine)


def _correct_from(cfg: ScenarioConfig, consts: ProtocolConstants, i: int, grace: bool = True) -> Time:
    role = cfg.role(i)
    if role.kind == "correct":
        return 0
    if role.kind == "recovering":
        return role.at + (consts.d_node if grace else 0)
    return INF


def _clusters(items: Sequence, key: Callable, gap: Time) -> List[List]:
    """Single-linkage groups of ``items`` whose sorted keys differ by at most ``gap``."""
    out: List[List] = []
    last = None
    for it in sorted(items, key=key):
        k = key(it)
        if out and k - last <= gap:
            out[-1].append(it)
        else:
            out.append([it])
        last = k
    return out


def _within(events: Sequence[TraceEvent], lo: Time, hi: Time) -> List[TraceEvent]:
    """Events (sorted by time) with ``lo <= t_real <= hi``."""
    times = [e.t_real for e in events]
    return list(events[bisect.bisect_left(times, lo):bisect.bisect_right(times, hi)])


@dataclass
class Participation:
    node: int
    general: int
    start: Time  # real time the anchor was set
    end: Time  # real time of the reset, supersede or horizon
    anchor_rt: Time
    value: Optional[bytes]


class TraceIndex:
    """Correct-node events after ``check_from``, indexed for the property checks."""

    def __init__(self, trace: Trace, cfg: ScenarioConfig):
        self.cfg = cfg
        self.consts = consts = cfg.constants()
        self.d = consts.d
        self.n = cfg.n
        self.horizon = cfg.horizon
        self.windows = stability_windows(trace, cfg)
        self.start = self.windows.check_from
        self.correct_from = [_correct_from(cfg, consts, i) for i in range(cfg.n)]
        self.general_correct = self.correct_from[cfg.general] == 0
        by_kind: Dict[str, List[TraceEvent]] = {}
        self.events: List[TraceEvent] = []
        for e in trace.events:
            if e.node < 0 or e.t_real < self.start or e.t_real < self.correct_from[e.node]:
                continue
            self.events.append(e)
            by_kind.setdefault(e.kind, []).append(e)
        self.by_kind = by_kind
        g = lambda e: e.payload.get("G")  # noqa: E731

        def group(kind: str, keyf) -> Dict[tuple, List[TraceEvent]]:
            out: Dict[tuple, List[TraceEvent]] = {}
            for e in by_kind.get(kind, ()):
                out.setdefault(keyf(e), []).append(e)
            return out

        self.initiations = [e for e in by_kind.get("initiate", ()) if e.payload.get("ok")]
        self.invokes = group("invoke", lambda e: (g(e), e.payload["m"]))
        self.iaccepts = group("iaccept", lambda e: (g(e), e.payload["m"]))
        self.decides = by_kind.get("decide", [])
        self.aborts = by_kind.get("abort", [])
        self.decides_by = group("decide", lambda e: (g(e), e.payload["m"]))
        self.lines = group("line", lambda e: (e.payload["line"], g(e), e.payload["m"]))
        self.accepts = group("accept", lambda e: (g(e), e.payload["p"], e.payload["m"], e.payload["k"]))
        self.bm_invokes = group("bm_invoke", lambda e: (g(e), e.payload["p"], e.payload["m"], e.payload["k"]))
        self.bm_invokes_by_p = group("bm_invoke", lambda e: (g(e), e.payload["p"]))
        self.broadcasters = group("broadcaster", lambda e: (g(e), e.payload["p"]))
        self.participations = self._participations()

    def correct_at(self, t: Time) -> List[int]:
        return [i for i in range(self.n) if self.correct_from[i] <= t]

    def node_correct(self, i: int) -> bool:
        return self.correct_from[i] == 0

    def _participations(self) -> Dict[Tuple[int, int], List[Participation]]:
        out: Dict[Tuple[int, int], List[Participation]] = {}
        kinds = ("anchor", "reset", "supersede", "corrupt")
        evs = [e for e in self.events if e.kind in kinds]
        open_: Dict[Tuple[int, int], Participation] = {}
        for e in evs:
            key = (e.node, e.payload.get("G"))
            if e.kind == "corrupt":
                for k in [k for k in open_ if k[0] == e.node]:
                    open_.pop(k).end = e.t_real
                continue
            cur = open_.pop(key, None)
            if cur is not None:
                cur.end = e.t_real
            if e.kind == "anchor":
                p = Participation(e.node, key[1], e.t_real, self.horizon, e.payload["anchor_rt"], e.payload.get("m"))
                open_[key] = p
                out.setdefault(key, []).append(p)
        return out

    def participation_at(self, node: int, general: int, t: Time) -> Optional[Participation]:
        for p in self.participations.get((node, general), ()):
            if p.start <= t <= p.end:
                return p
        return None


def _index(trace, cfg) -> TraceIndex:
    return trace if isinstance(trace, TraceIndex) else TraceIndex(trace, cfg)


def _executions(ix: TraceIndex, events: Iterable[TraceEvent]) -> List[List[TraceEvent]]:
    gap = 2 * ix.consts.d_rmv - 3 * ix.d
    by_key: Dict[tuple, List[TraceEvent]] = {}
    for e in events:
        by_key.setdefault((e.payload["G"], e.payload["m"]), []).append(e)
    out = []
    for key in sorted(by_key, key=lambda k: (k[0], k[1])):
        out += _clusters(by_key[key], lambda e: e.payload["anchor_rt"], gap)
    return out


def _correct_initiation_windows(ix: TraceIndex):
    """Correct-General initiations with their value and send time."""
    if not ix.general_correct:
        return []
    return [(e, e.payload["m"], e.t_real) for e in ix.initiations if e.node == ix.cfg.general]


def _invokes_near(ix: TraceIndex, general: int, m: bytes, lo: Time, hi: Time) -> List[TraceEvent]:
    return _within(ix.invokes.get((general, m), []), lo, hi)


def _first_return(ix: TraceIndex, node: int, general: int, after: Time, until: Time) -> Optional[TraceEvent]:
    for e in ix.decides + ix.aborts:
        if e.node == node and e.payload["G"] == general and after <= e.t_real <= until:
            return e
    return None


# ---------------------------------------------------------------------------
# agreement, validity, termination


def chk_core(trace, cfg: ScenarioConfig) -> List[Verdict]:
    ix = _index(trace, cfg)
    d, consts = ix.d, ix.consts
    agreement, validity, termination, single = (Verdict(p) for p in CORE_IDS)
    horizon = ix.horizon

    # agreement: a decide obliges every correct node to decide the same value in that execution
    for e in ix.decides:
        m, g, a = e.payload["m"], e.payload["G"], e.payload["anchor_rt"]
        if a < ix.start:
            continue
        deadline = e.t_real + consts.d_agr + 7 * d
        if deadline > horizon:
            continue
        agreement.checked += 1
        for q in ix.correct_at(e.t_real):
            if q == e.node:
                continue
            conflict = [x for x in ix.decides if x.node == q and x.payload["G"] == g and x.payload["m"] != m
                        and abs(x.payload["anchor_rt"] - a) <= 4 * d]
            conflict += [x for x in ix.aborts if x.node == q and x.payload["G"] == g and x.payload.get("im") == m
                         and abs(x.payload["anchor_rt"] - a) <= 6 * d]
            same = [x for x in ix.decides_by.get((g, m), []) if x.node == q
                    and abs(x.payload["anchor_rt"] - a) <= 6 * d]
            if conflict:
                agreement.fail(e, conflict[0])
            elif not same:
                agreement.fail(e)

    # validity: a correct General's initiation is decided by everybody
    for init, m, t0 in _correct_initiation_windows(ix):
        if t0 + consts.d_agr + 7 * d > horizon:
            continue
        validity.checked += 1
        g = init.node
        for q in ix.correct_at(t0):
            got = [x for x in ix.decides_by.get((g, m), []) if x.node == q and t0 <= x.t_real <= t0 + consts.d_agr + 7 * d]
            if not got:
                validity.fail(init)

    # termination: an anchored node returns (or is wiped) within the agreement bound
    for (node, g), parts in ix.participations.items():
        for p in parts:
            if p.anchor_rt < ix.start:
                continue
            # an i-accept that arrives past the bound returns on the spot
            limit = max(p.anchor_rt + consts.d_agr, p.start) + d
            if limit > horizon:
                continue
            termination.checked += 1
            ret = _first_return(ix, node, g, p.start, p.end)
            if ret is None and p.end > limit:
                termination.fail(*_anchor_event(ix, p))
            elif ret is not None and ret.t_real > limit:
                termination.fail(*_anchor_event(ix, p), ret)
            # single return per anchor setting
            rets = [x for x in ix.decides + ix.aborts if x.node == node and x.payload["G"] == g
                    and p.start <= x.t_real <= p.end]
            single.checked += 1
            if len(rets) > 1:
                single.fail(*rets)
    return [agreement, validity, termination, single]


def _anchor_event(ix: TraceIndex, p: Participation) -> Tuple[TraceEvent, ...]:
    for e in ix.by_kind.get("anchor", ()):
        if e.node == p.node and e.t_real == p.start and e.payload["G"] == p.general:
            return (e,)
    return ()


# ---------------------------------------------------------------------------
# timeliness


def chk_timeliness(trace, cfg: ScenarioConfig) -> List[Verdict]:
    ix = _index(trace, cfg)
    d, consts = ix.d, ix.consts
    v = {p: Verdict(p) for p in TIMELINESS_IDS}
    horizon = ix.horizon
    validity_inits = _correct_initiation_windows(ix)

    def validity_holds(g, m, anchors) -> bool:
        return any(i.node == g and mm == m and t0 - d <= min(anchors) and max(anchors) <= t0 + 4 * d
                   for i, mm, t0 in validity_inits)

    for ex in _executions(ix, [e for e in ix.decides if e.payload["anchor_rt"] >= ix.start]):
        g, m = ex[0].payload["G"], ex[0].payload["m"]
        anchors = [e.payload["anchor_rt"] for e in ex]
        times = [e.t_real for e in ex]
        # 1(a) decide times
        bound = 2 * d if validity_holds(g, m, anchors) else 3 * d
        v["T1a"].checked += 1
        if max(times) - min(times) > bound:
            v["T1a"].fail(min(ex, key=lambda e: e.t_real), max(ex, key=lambda e: e.t_real))
        # 1(b) anchors
        v["T1b"].checked += 1
        if max(anchors) - min(anchors) > 6 * d:
            v["T1b"].fail(min(ex, key=lambda e: e.payload["anchor_rt"]), max(ex, key=lambda e: e.payload["anchor_rt"]))
        # 1(c) anchors inside the correct-invocation interval
        accepts = [x for x in ix.iaccepts.get((g, m), []) if min(anchors) - 6 * d <= x.payload["anchor_rt"] <= max(anchors) + 6 * d]
        last = max([x.t_real for x in accepts] + times)
        inv = _invokes_near(ix, g, m, min(anchors) - 6 * d, last)
        if inv:
            t1, t2 = inv[0].t_real, inv[-1].t_real
            for e in ex:
                v["T1c"].checked += 1
                if not t1 - 2 * d <= e.payload["anchor_rt"] <= t2:
                    v["T1c"].fail(e, inv[0], inv[-1])
        # 1(d)
        for e in ex:
            v["T1d"].checked += 1
            lag = e.t_real - e.payload["anchor_rt"]
            if lag < 0 or lag > consts.d_agr:
                v["T1d"].fail(e)
                if 0 <= lag <= consts.d_agr + 8 * d:
                    v["T1d"].note = "passes only with the extra 8d slack"

    # 2: correct General, all correct nodes invoked in [t0, t0+d]
    for init, m, t0 in validity_inits:
        g = init.node
        if t0 + 4 * d > horizon:
            continue
        invoked = {x.node for x in _invokes_near(ix, g, m, t0, t0 + d)}
        if not set(ix.correct_at(t0)) <= invoked:
            continue
        for x in ix.decides_by.get((g, m), []):
            if t0 - d <= x.t_real <= t0 + consts.d_agr:
                v["T2"].checked += 1
                if not t0 - d <= x.payload["anchor_rt"] <= x.t_real <= t0 + 4 * d:
                    v["T2"].fail(init, x)

    # 3: return within d_agr of own invocation, d_agr + 7d when not invoked.
    # An i-accept whose anchor is already older than d_agr starts no execution.
    stale = 0
    for (node, g), parts in ix.participations.items():
        for p in parts:
            if p.anchor_rt < ix.start or p.value is None:
                continue
            ret = _first_return(ix, node, g, p.start, p.end)
            if ret is None:
                continue
            if p.start - p.anchor_rt > consts.d_agr:
                stale += 1
                continue
            # invocations more than 4d before the anchor cannot have produced it
            window = _invokes_near(ix, g, p.value, p.anchor_rt - 4 * d, ret.t_real)
            if not window:
                continue
            own = [x for x in window if x.node == node]
            limit = own[-1].t_real + consts.d_agr if own else window[0].t_real + consts.d_agr + 7 * d
            v["T3"].checked += 1
            if ret.t_real > limit:
                v["T3"].fail(own[-1] if own else window[0], ret)

    if stale:
        v["T3"].note = f"{stale} stale i-accept(s) returned on arrival, not timed"
    # 4: separation of decided anchors
    decs = sorted((e for e in ix.decides if e.payload["anchor_rt"] >= ix.start), key=lambda e: e.payload["anchor_rt"])
    _separation(ix, decs, v["T4a"], v["T4b"])
    return list(v.values())


def _separation(ix: TraceIndex, events: List[TraceEvent], diff_v: Verdict, same_v: Verdict) -> None:
    d, consts = ix.d, ix.consts
    far = 2 * consts.d_rmv - 3 * d
    anchors = [e.payload["anchor_rt"] for e in events]
    for i, e in enumerate(events):
        a = anchors[i]
        hi = bisect.bisect_right(anchors, a + far)
        for j in range(i + 1, hi):
            x = events[j]
            if x.payload["G"] != e.payload["G"]:
                continue
            gap = anchors[j] - a
            if x.payload["m"] != e.payload["m"]:
                diff_v.checked += 1
                if gap <= 4 * d:
                    diff_v.fail(e, x)
            else:
                same_v.checked += 1
                if 6 * d < gap <= far:
                    same_v.fail(e, x)


# ---------------------------------------------------------------------------
# initiator properties


def chk_ia(trace, cfg: ScenarioConfig) -> List[Verdict]:
    ix = _index(trace, cfg)
    d, consts = ix.d, ix.consts
    v = {p: Verdict(p) for p in IA_IDS}
    horizon = ix.horizon
    all_acc = sorted((e for lst in ix.iaccepts.values() for e in lst), key=lambda e: e.t_real)

    # IA-1: correct General
    for init, m, t0 in _correct_initiation_windows(ix):
        if t0 + 4 * d > horizon:
            continue
        g = init.node
        got = [x for x in ix.iaccepts.get((g, m), []) if t0 - d <= x.t_real <= t0 + consts.d_agr]
        nodes = ix.correct_at(t0)
        firsts = {}
        for x in got:
            firsts.setdefault(x.node, x)
        v["IA-1A"].checked += 1
        for q in nodes:
            x = firsts.get(q)
            if x is None or not t0 <= x.t_real <= t0 + 4 * d:
                v["IA-1A"].fail(init, *((x,) if x else ()))
        acc = list(firsts.values())
        if acc:
            v["IA-1B"].checked += 1
            if max(x.t_real for x in acc) - min(x.t_real for x in acc) > 2 * d:
                v["IA-1B"].fail(init, min(acc, key=lambda x: x.t_real), max(acc, key=lambda x: x.t_real))
            v["IA-1C"].checked += 1
            an = [x.payload["anchor_rt"] for x in acc]
            if max(an) - min(an) > d:
                v["IA-1C"].fail(init, *acc)
            for x in acc:
                v["IA-1D"].checked += 1
                if not t0 - d <= x.payload["anchor_rt"] <= x.t_real <= t0 + 4 * d:
                    v["IA-1D"].fail(init, x)

    for e in all_acc:
        g, m, a = e.payload["G"], e.payload["m"], e.payload["anchor_rt"]
        if a < ix.start:
            continue
        # IA-2: some correct node invoked
        v["IA-2"].checked += 1
        if not _invokes_near(ix, g, m, e.t_real - consts.d_rmv, e.t_real):
            v["IA-2"].fail(e)
        # IA-3B: the anchor is not after every correct invocation
        v["IA-3B"].checked += 1
        if not _invokes_near(ix, g, m, a, e.t_real):
            v["IA-3B"].fail(e)
        # IA-3C, premised on a timely i-accept of the same wave
        wave = [x for x in ix.iaccepts.get((g, m), []) if abs(x.t_real - e.t_real) <= 2 * d]
        if any(x.t_real - x.payload["anchor_rt"] <= consts.d_agr for x in wave):
            v["IA-3C"].checked += 1
            if not 0 <= e.t_real - a <= consts.d_agr + 8 * d:
                v["IA-3C"].fail(e)
        # IA-3A: everybody follows within 2d with anchors within 6d
        if e.t_real - a <= consts.d_agr and e.t_real + 2 * d <= horizon:
            v["IA-3A"].checked += 1
            for q in ix.correct_at(e.t_real):
                if q == e.node:
                    continue
                match = [x for x in ix.iaccepts.get((g, m), []) if x.node == q and abs(x.t_real - e.t_real) <= 2 * d]
                if not match:
                    v["IA-3A"].fail(e)
                elif all(abs(x.payload["anchor_rt"] - a) > 6 * d for x in match):
                    v["IA-3A"].fail(e, match[0])

    acc = sorted((e for e in all_acc if e.payload["anchor_rt"] >= ix.start), key=lambda e: e.payload["anchor_rt"])
    _separation(ix, acc, v["IA-4A"], v["IA-4B"])
    return list(v.values())


# ---------------------------------------------------------------------------
# broadcast properties


def chk_tps(trace, cfg: ScenarioConfig) -> List[Verdict]:
    ix = _index(trace, cfg)
    d, consts = ix.d, ix.consts
    phi = consts.phi
    horizon = ix.horizon
    v = {p: Verdict(p) for p in TPS_IDS}

    def participant(q, g, t, until_since) -> Optional[Participation]:
        """Participation of ``q`` at ``t`` that lasts at least until anchor + ``until_since``."""
        p = ix.participation_at(q, g, t)
        if p is None or p.anchor_rt < ix.start:
            return None
        if p.end < min(p.anchor_rt + until_since, horizon) or p.anchor_rt + until_since > horizon:
            return None
        return p

    def accepted_by(q, key, p: Participation) -> List[TraceEvent]:
        return [x for x in ix.accepts.get(key, []) if x.node == q and p.start <= x.t_real <= p.end]

    # TPS-1: in-time broadcast by a correct node reaches every participating correct node
    for key, invs in ix.bm_invokes.items():
        g, p_id, m, k = key
        for inv in invs:
            since = inv.payload.get("since")
            if since is None or since > (2 * k - 1) * phi or not ix.node_correct(p_id):
                continue
            for q in ix.correct_at(inv.t_real):
                # the obligation falls due 3d after the invocation; a node wiped earlier owes nothing
                part = ix.participation_at(q, g, inv.t_real)
                if part is None or part.anchor_rt < ix.start or inv.t_real + 3 * d > horizon:
                    continue
                if part.end < inv.t_real + 3 * d:
                    continue
                v["TPS-1"].checked += 1
                acc = accepted_by(q, key, part)
                if not acc or acc[0].payload["since"] > (2 * k + 1) * phi or abs(acc[0].t_real - inv.t_real) > 3 * d:
                    v["TPS-1"].fail(inv, *acc[:1])

    for key, accs in ix.accepts.items():
        g, p_id, m, k = key
        for e in accs:
            # TPS-2: unforgeability
            if ix.node_correct(p_id):
                v["TPS-2"].checked += 1
                invs = _within(ix.bm_invokes.get(key, []), e.t_real - consts.d_rmv - (2 * consts.f + 3) * phi, e.t_real)
                if not invs:
                    v["TPS-2"].fail(e)
            since = e.payload.get("since")
            if since is None or since < 0:
                continue
            r = -(-since // phi)  # smallest r with since <= r*phi
            for q in ix.correct_at(e.t_real):
                if q == e.node:
                    continue
                # TPS-3: relay
                part = participant(q, g, e.t_real, (r + 2) * phi)
                if part is not None:
                    v["TPS-3"].checked += 1
                    acc = accepted_by(q, key, part)
                    if not acc or acc[0].payload["since"] > (r + 2) * phi:
                        v["TPS-3"].fail(e, *acc[:1])
                # TPS-4 (a): detection
                part = participant(q, g, e.t_real, (2 * k + 2) * phi)
                if part is not None:
                    v["TPS-4"].checked += 1
                    seen = [x for x in ix.broadcasters.get((g, p_id), []) if x.node == q
                            and part.start <= x.t_real <= part.end and x.payload["since"] <= (2 * k + 2) * phi]
                    if not seen:
                        v["TPS-4"].fail(e)

    # TPS-4 (b): a correct node that never broadcast is never detected
    for (g, p_id), evs in ix.broadcasters.items():
        if not ix.node_correct(p_id):
            continue
        for e in evs:
            v["TPS-4"].checked += 1
            invs = _within(ix.bm_invokes_by_p.get((g, p_id), []), e.t_real - consts.d_rmv - (2 * consts.f + 3) * phi, e.t_real)
            if not invs:
                v["TPS-4"].fail(e)
    return list(v.values())


# ---------------------------------------------------------------------------
# proof side conditions


def _spacing(events: List[TraceEvent], near: Time, far: Time, verdict: Verdict) -> None:
    """All pairs must be at most ``near`` or more than ``far`` apart."""
    times = [e.t_real for e in events]
    verdict.checked += len(times)
    for i, t in enumerate(times):
        lo = bisect.bisect_right(times, t + near)
        hi = bisect.bisect_right(times, t + far)
        if lo < hi:
            verdict.fail(events[i], events[lo])


def chk_diagnostics(trace, cfg: ScenarioConfig) -> List[Verdict]:
    ix = _index(trace, cfg)
    d, consts = ix.d, ix.consts
    horizon = ix.horizon
    v = {p: Verdict(p, diagnostic=True) for p in DIAGNOSTIC_IDS}
    # settle-in margin after the stable point, so stale executions are not judged
    lo = ix.start + (10 * d if not ix.windows.pristine else 0)

    for (line, g, m), evs in ix.lines.items():
        evs = [e for e in evs if e.t_real >= lo]
        if line == "M2":
            _spacing(evs, 9 * d, 2 * consts.d_rmv, v["D-m2-spacing"])
        elif line == "M4":
            _spacing(evs, 7 * d, 2 * consts.d_rmv, v["D-m4-spacing"])

    triggered = timely = 0
    for key, accs in ix.iaccepts.items():
        for e in accs:
            if e.t_real < lo:
                continue
            v["D-before-support"].checked += 1
            if not _invokes_near(ix, key[0], key[1], e.t_real - consts.d_rmv, e.t_real):
                v["D-before-support"].fail(e)
            lag = e.t_real - e.payload["anchor_rt"]
            if lag > consts.d_rmv - 9 * d:
                continue
            triggered += 1
            timely += lag <= consts.d_agr
            # a recent M4 backs every N4 whose anchor is young enough
            m4 = ix.lines.get(("M4", key[0], key[1]), [])
            v["D-faulty-reset"].checked += 1
            if not _within(m4, e.t_real - (consts.d_rmv - 7 * d), e.t_real):
                v["D-faulty-reset"].fail(e)
            # N4 cluster: all correct nodes execute N4 within 2d
            if e.t_real + 2 * d <= horizon:
                n4 = ix.lines.get(("N4", key[0], key[1]), [])
                for q in ix.correct_at(e.t_real):
                    v["D-faulty-reset"].checked += 1
                    if not [x for x in _within(n4, e.t_real - 2 * d, e.t_real + 2 * d) if x.node == q]:
                        v["D-faulty-reset"].fail(e)

    v["D-faulty-reset"].note = f"premise lag<=d_rmv-9d fired {triggered}x, {timely} also within lag<=d_agr"

    # good reset: a correct General after a silence of d_reset
    prev = None
    for init, m, t0 in _correct_initiation_windows(ix):
        if prev is None:
            quiet = ix.windows.pristine or t0 - consts.d_reset >= ix.windows.iota0
        else:
            quiet = t0 - prev >= consts.d_reset
        prev = t0
        if not quiet or t0 + 4 * d > horizon:
            continue
        g = init.node
        nodes = ix.correct_at(t0)
        sup = {x.node: x for x in _invokes_near(ix, g, m, t0, t0 + 4 * d)}
        n4 = {}
        for x in _within(ix.lines.get(("N4", g, m), []), t0, t0 + 4 * d):
            n4.setdefault(x.node, x)
        v["D-good-reset"].checked += 1
        ok = set(nodes) <= set(sup) and set(nodes) <= set(n4)
        if ok:
            st = [sup[q].t_real for q in nodes]
            nt = [n4[q].t_real for q in nodes]
            ok = max(st) - min(st) <= d and max(nt) - min(nt) <= 2 * d
        if not ok:
            v["D-good-reset"].fail(init)
    return list(v.values())


# ---------------------------------------------------------------------------
# driver


@dataclass
class Report:
    verdicts: List[Verdict]
    windows: StabilityWindows

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts if not v.diagnostic)

    @property
    def diagnostics_passed(self) -> bool:
        return all(v.passed for v in self.verdicts if v.diagnostic)

    def failed(self) -> List[str]:
        return [v.prop for v in self.verdicts if not v.passed]

    def get(self, prop: str) -> Verdict:
        for v in self.verdicts:
            if v.prop == prop:
                return v
        raise KeyError(prop)

    def lines(self) -> List[str]:
        return [v.line() for v in self.verdicts]


def check_trace(trace: Trace, cfg: ScenarioConfig, diagnostics: bool = False) -> Report:
    ix = TraceIndex(trace, cfg)
    verdicts: List[Verdict] = []
    if cfg.mode == "agreement":
        verdicts += chk_core(ix, cfg) + chk_timeliness(ix, cfg) + chk_ia(ix, cfg)
    verdicts += chk_tps(ix, cfg)
    if diagnostics and cfg.mode == "agreement":
        verdicts += chk_diagnostics(ix, cfg)
    return Report(verdicts, ix.windows)
