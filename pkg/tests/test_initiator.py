"""Initiator blocks K..N, cleanup expiries and freshness, at n=4, f=1, in ticks."""

from __future__ import annotations

import pytest

from ssbyz.core import Kind, Message, Outbox
from ssbyz.initiator import InitiatorInstance, in_cleanup, in_freshness, in_invoke, in_receive

from .conftest import D

M = b"m"


@pytest.fixture
def inst(c41):
    return InitiatorInstance(owner=0, general=0, consts=c41)


def sent(out, kind):
    return [m for m in out.messages if m.kind == kind]


def feed(inst, kind, stamps, value=M):
    """Deliver ``kind`` from senders 1, 2, ... at the given times; return the last outbox."""
    out = None
    for s, t in enumerate(stamps, 1):
        out = in_receive(inst, Message(kind, s, 0, value), t)
    return out


# -- K ------------------------------------------------------------------

def test_invoke_fresh(inst):
    out = in_invoke(inst, M, 10 * D)
    assert inst.w_broadcast[M].current == 9 * D
    assert sent(out, Kind.SUPPORT) == [Message(Kind.SUPPORT, 0, 0, M)]
    assert inst.last_gm[M].current == 10 * D


def test_invoke_rejected_when_last_g_set(inst):
    inst.last_g.set(7 * D, 7 * D)
    out = in_invoke(inst, M, 10 * D)
    assert out.messages == [] and out.events == [("invoke_rejected", {"m": M, "reason": "last_g"})]


def test_invoke_rejected_after_recent_support(inst):
    inst.last_support = 9500
    out = in_invoke(inst, M, 10 * D)
    assert out.messages == [] and out.events[0][1]["reason"] == "recent_support"


def test_invoke_rejected_while_other_value_recorded(inst):
    in_invoke(inst, b"x", 0)
    out = in_invoke(inst, M, 5 * D)
    assert out.events[0][1]["reason"] == "recording"


def test_invoke_rejected_when_last_gm_held_d_ago(inst):
    inst._cell(inst.last_gm, M).set(8 * D, 8 * D)
    assert in_invoke(inst, M, 10 * D).events[0][1]["reason"] == "last_gm"


def test_duplicate_invocation_fails_silently(inst):
    in_invoke(inst, M, 10 * D)
    out = in_invoke(inst, M, 10 * D + 500)
    assert out.messages == []


# -- L ------------------------------------------------------------------

def test_support_pair_sets_recording_time(inst):
    feed(inst, Kind.SUPPORT, [10 * D, 13500])
    assert inst.w_broadcast[M].current == 8 * D


def test_support_quorum_within_2d_sends_approve(inst):
    out1 = feed(inst, Kind.SUPPORT, [10 * D, 10800])
    assert not sent(out1, Kind.APPROVE)
    out = in_receive(inst, Message(Kind.SUPPORT, 3, 0, M), 11900)
    assert sent(out, Kind.APPROVE)


def test_supports_too_far_apart(inst):
    feed(inst, Kind.SUPPORT, [0, 10 * D])
    assert M not in inst.w_broadcast or inst.w_broadcast[M].current is None


def test_recording_time_only_moves_forward(inst):
    feed(inst, Kind.SUPPORT, [10 * D, 13500])
    in_receive(inst, Message(Kind.SUPPORT, 3, 0, M), 13600)
    # minimal window is now [13.5, 13.6], giving 11.5 > 8
    assert inst.w_broadcast[M].current == 11500


# -- M ------------------------------------------------------------------

def test_approve_pair_sets_ready(inst):
    feed(inst, Kind.APPROVE, [0, 4 * D])
    assert M in inst.ready


def test_approve_quorum_within_3d_sends_ready(inst):
    out = feed(inst, Kind.APPROVE, [0, D, 2 * D])
    assert sent(out, Kind.READY)


def test_approve_quorum_over_4d_is_ready_only(inst):
    out = feed(inst, Kind.APPROVE, [0, 2 * D, 4 * D])
    assert M in inst.ready and not sent(out, Kind.READY)


# -- N ------------------------------------------------------------------

def test_ready_pair_relays(inst):
    inst.ready[M] = 0
    out = feed(inst, Kind.READY, [0, D])
    assert sent(out, Kind.READY)


def test_ready_quorum_iaccepts(inst):
    inst.ready[M] = 0
    inst._cell(inst.w_broadcast, M).set(0, 8 * D)
    outs = [in_receive(inst, Message(Kind.READY, s, 0, M), 9 * D) for s in (1, 2, 3)]
    assert ("iaccept", {"m": M, "anchor": 8 * D}) in outs[-1].events
    assert inst.anchor_out == (M, 8 * D)
    assert inst.last_g.current == 9 * D
    # N4 wipes the recordings and ignores the value for 3d
    assert inst.w_broadcast[M].current is None
    assert not in_receive(inst, Message(Kind.READY, 1, 0, M), 11 * D).events


def test_ready_quorum_without_ready_flag(inst):
    out = feed(inst, Kind.READY, [0, 0, 0])
    assert out.messages == [] and out.events == []


def test_ready_quorum_without_recording_is_anomaly(inst):
    inst.ready[M] = 0
    out = feed(inst, Kind.READY, [0, 0, 0])
    assert [k for k, _ in out.events if k == "anomaly"] and inst.anchor_out is None


# -- cleanup --------------------------------------------------------------

@pytest.mark.parametrize("age,kept", [(7 * D, True), (7 * D + 1, False), (7100, False), (8 * D, False)])
def test_cleanup_last_g_expiry(inst, age, kept):
    t0 = 100 * D
    inst.last_g.set(t0, t0)
    in_cleanup(inst, t0 + age)
    assert (inst.last_g.current is not None) is kept


def test_cleanup_future_last_g(inst):
    now = 100 * D
    inst.last_g.set(now, now + 5 * D)
    in_cleanup(inst, now)
    assert inst.last_g.current is None


@pytest.mark.parametrize("age,kept", [(83 * D, True), (84 * D, False)])
def test_cleanup_last_gm_expiry(inst, age, kept):
    inst._cell(inst.last_gm, M).set(0, 0)
    in_cleanup(inst, age)
    assert (M in inst.last_gm and inst.last_gm[M].current is not None) is kept


def test_cleanup_decays_messages_after_d_rmv(inst):
    feed(inst, Kind.SUPPORT, [0])
    in_cleanup(inst, 37 * D)
    assert len(inst.log) == 1
    in_cleanup(inst, 37 * D + 1)
    assert len(inst.log) == 0


# -- freshness ------------------------------------------------------------

def test_fresh_new_instance(inst):
    assert in_freshness(inst, M, 10 * D)


def test_not_fresh_with_old_recording(inst):
    inst._cell(inst.w_broadcast, b"x").set(8 * D, 7 * D)
    assert not in_freshness(inst, M, 10 * D)


def test_fresh_when_last_g_set_after_lookback_point(inst):
    inst.last_g.set(9500, 9500)
    assert in_freshness(inst, M, 10 * D)


# -- ticking ----------------------------------------------------------------

def test_active_values_are_reevaluated_on_tick(inst):
    inst.ready[M] = 0
    inst._cell(inst.w_broadcast, M).set(0, 0)
    feed(inst, Kind.READY, [0, 0])
    assert inst.needs_ticks()
    in_receive(inst, Message(Kind.READY, 3, 0, M), D)
    assert not inst.needs_ticks()


def test_quiet_value_needs_no_ticks(inst):
    feed(inst, Kind.SUPPORT, [0])
    assert not inst.needs_ticks()
    out = Outbox()
    assert inst.tick(D, out) is None
