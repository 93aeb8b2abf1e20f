"""Hand-forged violating traces, one or more per property id.

Each entry mutates a passing base trace (a correct-General agreement run, or a
broadcast-only run) so that exactly the named obligation is broken; other
properties may fail along with it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Tuple

from ssbyz.engine import Trace, TraceEvent, sim_run
from ssbyz.scenario import ScenarioConfig, load_scenario

from .conftest import D, SCENARIOS

Events = List[TraceEvent]


@dataclass(frozen=True)
class Forgery:
    name: str
    expect: str
    base: str  # "agreement" or "broadcast"
    mutate: Callable[[Events], Events]


@lru_cache(maxsize=None)
def base(kind: str) -> Tuple[ScenarioConfig, Trace]:
    if kind == "agreement":
        cfg = load_scenario(SCENARIOS / "validity.scn")
    else:
        cfg = load_scenario(SCENARIOS / "broadcast.scn").with_seed(5)
    return cfg, sim_run(cfg)


def forged_trace(f: Forgery) -> Tuple[ScenarioConfig, Trace]:
    cfg, tr = base(f.base)
    events = [e._replace(payload=dict(e.payload)) for e in tr.events]
    out = f.mutate(events)
    return cfg, Trace(sorted(out, key=lambda e: e.t_real))


# -- mutation helpers ---------------------------------------------------------

def find(events: Events, kind: str, node: int, **match) -> int:
    for i, e in enumerate(events):
        if e.kind == kind and e.node == node and all(e.payload.get(k) == v for k, v in match.items()):
            return i
    raise LookupError((kind, node, match))


def edit(kind, node, match=None, t=None, **payload):
    def go(events):
        i = find(events, kind, node, **(match or {}))
        e = events[i]
        e.payload.update(payload)
        events[i] = e._replace(t_real=e.t_real if t is None else t(e.t_real))
        return events
    return go


def drop(kind, node, **match):
    def go(events):
        del events[find(events, kind, node, **match)]
        return events
    return go


def drop_all(kind, node=None, **match):
    def go(events):
        return [e for e in events if not (e.kind == kind and (node is None or e.node == node)
                                          and all(e.payload.get(k) == v for k, v in match.items()))]
    return go


def clone(kind, node, t, match=None, **payload):
    def go(events):
        e = events[find(events, kind, node, **(match or {}))]
        p = dict(e.payload)
        p.update(payload)
        events.append(e._replace(t_real=t(e.t_real), payload=p))
        return events
    return go


def chain(*fns):
    def go(events):
        for fn in fns:
            events = fn(events)
        return events
    return go


def field_of(kind, node, key):
    e = next(x for x in base("agreement")[1].events if x.kind == kind and x.node == node)
    return e.payload[key] if key != "t_real" else e.t_real


# anchor and timing facts of the base agreement run (correct General initiates at 100d)
T0 = 100 * D


def _decide_anchor(node):
    return field_of("decide", node, "anchor_rt")


def _iaccept_anchors():
    return [e.payload["anchor_rt"] for e in base("agreement")[1].events if e.kind == "iaccept"]


def _last_invoke():
    return max(e.t_real for e in base("agreement")[1].events if e.kind == "invoke")


def corpus() -> List[Forgery]:
    a1 = _decide_anchor(1)
    others = [_decide_anchor(q) for q in (0, 2, 3)]
    return [
        # agreement, validity, termination
        Forgery("conflicting-decide", "Agreement", "agreement", edit("decide", 3, m=b"x")),
        Forgery("abort-under-correct-general", "Validity", "agreement",
                chain(drop("decide", 3), drop("bm_invoke", 3))),
        Forgery("never-returns", "Termination", "agreement", chain(drop("decide", 3), drop("reset", 3))),
        Forgery("returns-twice", "SingleReturn", "agreement", clone("decide", 3, lambda t: t + 300)),
        # timeliness
        Forgery("decides-spread", "T1a", "agreement", edit("decide", 1, t=lambda t: T0 + 3950)),
        Forgery("anchors-spread", "T1b", "agreement", edit("decide", 1, anchor_rt=max(others) - 6 * D - 100)),
        Forgery("anchor-after-invocations", "T1c", "agreement", edit("decide", 1, anchor_rt=_last_invoke() + 40)),
        Forgery("anchor-after-decide", "T1d", "agreement",
                edit("decide", 1, anchor_rt=field_of("decide", 1, "t_real") + 1)),
        Forgery("decide-past-4d", "T2", "agreement", edit("decide", 1, t=lambda t: T0 + 4 * D + 100)),
        Forgery("slow-return", "T3", "agreement",
                chain(edit("decide", 1, t=lambda t: field_of("invoke", 1, "t_real") + 24 * D + 1), drop("reset", 1))),
        Forgery("close-different-values", "T4a", "agreement",
                clone("decide", 1, lambda t: t + 20, m=b"x", anchor_rt=a1 + D)),
        Forgery("same-value-mid-gap", "T4b", "agreement",
                clone("decide", 1, lambda t: t + 10 * D, anchor_rt=a1 + 10 * D)),
        # initiator
        Forgery("missing-iaccept", "IA-1A", "agreement", drop("iaccept", 3)),
        Forgery("iaccepts-spread", "IA-1B", "agreement", edit("iaccept", 1, t=lambda t: T0 + 3950)),
        Forgery("iaccept-anchors-spread", "IA-1C", "agreement", edit("iaccept", 1, anchor_rt=min(_iaccept_anchors()) + D + 50)),
        Forgery("anchor-before-initiation", "IA-1D", "agreement", edit("iaccept", 1, anchor_rt=T0 - D - 50)),
        Forgery("iaccept-unproposed", "IA-2", "agreement",
                clone("iaccept", 1, lambda t: T0 + 10 * D, m=b"z", anchor_rt=T0 + 9 * D)),
        Forgery("lonely-iaccept", "IA-3A", "agreement",
                clone("iaccept", 1, lambda t: T0 + 20 * D, anchor_rt=T0 + 19 * D + 500)),
        Forgery("anchor-after-all-invocations", "IA-3B", "agreement",
                edit("iaccept", 1, anchor_rt=_last_invoke() + 40)),
        Forgery("stale-anchor-in-timely-wave", "IA-3C", "agreement",
                edit("iaccept", 1, anchor_rt=field_of("iaccept", 1, "t_real") - 33 * D)),
        Forgery("iaccept-close-different-values", "IA-4A", "agreement",
                clone("iaccept", 1, lambda t: t + 20, m=b"x", anchor_rt=a1 + 2 * D)),
        Forgery("iaccept-same-value-mid-gap", "IA-4B", "agreement",
                clone("iaccept", 1, lambda t: t + 7 * D, anchor_rt=a1 + 7 * D)),
        # broadcast
        Forgery("missed-accept", "TPS-1", "broadcast", drop("accept", 0, p=1, k=1)),
        Forgery("accept-unbroadcast", "TPS-2", "broadcast", clone("accept", 0, lambda t: t + 10, p=2, m=b"z", k=1)),
        Forgery("late-relay", "TPS-3", "broadcast", edit("accept", 2, {"p": 1, "k": 1}, since=3 * 8 * D + 1)),
        Forgery("undetected-broadcaster", "TPS-4", "broadcast", drop_all("broadcaster", 2, p=1)),
        Forgery("phantom-broadcaster", "TPS-4", "broadcast",
                clone("broadcaster", 1, lambda t: t + 10, p=0)),
    ]


PROPERTY_IDS = (
    "Agreement", "Validity", "Termination", "SingleReturn",
    "T1a", "T1b", "T1c", "T1d", "T2", "T3", "T4a", "T4b",
    "IA-1A", "IA-1B", "IA-1C", "IA-1D", "IA-2", "IA-3A", "IA-3B", "IA-3C", "IA-4A", "IA-4B",
    "TPS-1", "TPS-2", "TPS-3", "TPS-4",
)


def diagnostic_corpus() -> List[Forgery]:
    return [
        Forgery("m2-mid-gap", "D-m2-spacing", "agreement",
                clone("line", 1, lambda t: t + 20 * D, line="M2")),
        Forgery("m4-mid-gap", "D-m4-spacing", "agreement",
                clone("line", 1, lambda t: t + 20 * D, {"line": "M4"})),
        Forgery("iaccept-without-support", "D-before-support", "agreement", drop_all("invoke")),
        Forgery("n4-without-m4", "D-faulty-reset", "agreement", drop_all("line", None, line="M4")),
        Forgery("slow-n4", "D-good-reset", "agreement", drop_all("line", 3, line="N4")),
    ]
