"""Broadcast blocks W..Z, buffering before the anchor, and cleanup, at n=4, f=1 (phase = 8d)."""

from __future__ import annotations

import pytest

from ssbyz.broadcast import BroadcastInstance, bm_cleanup, bm_invoke, bm_receive
from ssbyz.core import Kind, Message, Outbox

from .conftest import D

M = b"a"
PHI = 8 * D


@pytest.fixture
def inst(c41):
    b = BroadcastInstance(owner=0, general=0, consts=c41)
    b.set_anchor(0, 0, Outbox())
    return b


def msg(kind, sender, p=2, k=1, value=M):
    return Message(kind, sender, 0, value, p, k)


def sent(out, kind):
    return [m for m in out.messages if m.kind == kind]


def events(out, kind):
    return [p for k, p in out.events if k == kind]


def test_invoke_emits_one_init(inst):
    inst.owner = 2
    out = bm_invoke(inst, M, 1, 5 * D)
    assert out.messages == [Message(Kind.B_INIT, 2, 0, M, 2, 1)]
    assert events(out, "bm_invoke")[0]["since"] == 5 * D


def test_echo_within_deadline(inst):
    out = bm_receive(inst, msg(Kind.B_INIT, 2), 15 * D)
    assert sent(out, Kind.B_ECHO) == [Message(Kind.B_ECHO, 0, 0, M, 2, 1)]


def test_echo_after_deadline(inst):
    out = bm_receive(inst, msg(Kind.B_INIT, 2), 17 * D)
    assert out.messages == []


def test_echo_deadline_is_inclusive(inst):
    assert sent(bm_receive(inst, msg(Kind.B_INIT, 2), 2 * PHI), Kind.B_ECHO)


def test_init_from_non_origin_ignored(inst):
    assert bm_receive(inst, msg(Kind.B_INIT, 3, p=2), D).messages == []


def test_duplicate_init_echoed_once(inst):
    first = bm_receive(inst, msg(Kind.B_INIT, 2), D)
    second = bm_receive(inst, msg(Kind.B_INIT, 2), 2 * D)
    assert len(sent(first, Kind.B_ECHO)) == 1 and second.messages == []


def test_echo_thresholds(inst):
    bm_receive(inst, msg(Kind.B_ECHO, 1), D)
    out = bm_receive(inst, msg(Kind.B_ECHO, 2), D)
    assert sent(out, Kind.B_INIT2) and not events(out, "accept")
    out = bm_receive(inst, msg(Kind.B_ECHO, 3), D)
    assert events(out, "accept")[0]["line"] == "X"
    assert (2, M, 1) in inst.accepted


def test_echoes_past_deadline_do_nothing(inst):
    late = 3 * PHI + 1
    outs = [bm_receive(inst, msg(Kind.B_ECHO, s), late) for s in (1, 2, 3)]
    assert all(not o.messages and not o.events for o in outs)


def test_init2_thresholds(inst):
    assert not bm_receive(inst, msg(Kind.B_INIT2, 1), D).events
    out = bm_receive(inst, msg(Kind.B_INIT2, 3), D)
    assert 2 in inst.broadcasters and not sent(out, Kind.B_ECHO2)
    out = bm_receive(inst, msg(Kind.B_INIT2, 0), D)
    assert sent(out, Kind.B_ECHO2)


def test_init2_deadline(inst):
    late = 4 * PHI + 1
    for s in (0, 1, 3):
        bm_receive(inst, msg(Kind.B_INIT2, s), late)
    assert not inst.broadcasters


def test_echo2_untimed_relay_and_accept(inst):
    late = 50 * PHI
    bm_receive(inst, msg(Kind.B_ECHO2, 1), late)
    out = bm_receive(inst, msg(Kind.B_ECHO2, 3), late)
    assert sent(out, Kind.B_ECHO2)
    out = bm_receive(inst, msg(Kind.B_ECHO2, 0), late)
    assert events(out, "accept")[0]["line"] == "Z"


def test_accept_only_once(inst):
    for s in (1, 2, 3):
        bm_receive(inst, msg(Kind.B_ECHO, s), D)
    outs = [bm_receive(inst, msg(Kind.B_ECHO2, s), D) for s in (0, 1, 3)]
    assert not any(events(o, "accept") for o in outs)


def test_messages_buffer_until_anchor(c41):
    b = BroadcastInstance(0, 0, c41)
    assert bm_receive(b, msg(Kind.B_INIT, 2), D).messages == []
    out = Outbox()
    b.set_anchor(0, 2 * D, out)
    assert sent(out, Kind.B_ECHO)


def test_bad_round_or_origin_dropped(inst):
    assert not bm_receive(inst, msg(Kind.B_INIT, 2, k=3), D).messages
    assert not bm_receive(inst, msg(Kind.B_ECHO, 2, p=9), D).messages


def test_cleanup_horizon(inst):
    inst.log.add(0, msg(Kind.B_ECHO, 1, p=1))
    inst.log.add(5 * D, msg(Kind.B_ECHO, 1, p=2))
    inst.broadcasters[3] = 0
    bm_cleanup(inst, 41 * D)
    assert inst.log.senders(Kind.B_ECHO, M, 1, 1) == {}
    assert inst.log.senders(Kind.B_ECHO, M, 2, 1) == {1: 5 * D}
    assert 3 not in inst.broadcasters


def test_cleanup_keeps_boundary(inst):
    inst.log.add(0, msg(Kind.B_ECHO, 1))
    bm_cleanup(inst, 40 * D)
    assert len(inst.log) == 1


def test_cleanup_empty_noop(c41):
    b = BroadcastInstance(0, 0, c41)
    bm_cleanup(b, 10 * D)
    assert b.is_idle()


def test_accepted_chains_excludes_general(inst):
    inst.accepted = {(0, M, 1): 1, (1, M, 1): 1, (2, M, 2): 1}
    assert inst.accepted_chains(exclude=0) == {M: {1: {1}, 2: {2}}}
