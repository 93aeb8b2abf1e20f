"""Property-based checks of the time arithmetic, log, history cells and chain matching."""

from __future__ import annotations

import itertools
from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from ssbyz.agreement import has_distinct_chain
from ssbyz.core import (
    HALF_WRAP,
    WRAP,
    ClockModel,
    HistoryCell,
    Kind,
    Message,
    TimestampedLog,
    clock_read,
    derive_constants,
    shift,
    span,
)

local = st.integers(0, WRAP - 1)
gap = st.integers(-(HALF_WRAP - 1), HALF_WRAP - 1)


@given(local, gap)
def test_shift_then_span_is_identity(t, g):
    assert span(shift(t, g), t) == g


@given(local, local)
def test_span_antisymmetric(a, b):
    s = span(a, b)
    assert -HALF_WRAP <= s < HALF_WRAP
    if s != -HALF_WRAP:
        assert span(b, a) == -s


@given(st.integers(0, 10**6), st.integers(0, 10**6), local,
       st.fractions(Fraction(99, 100), Fraction(101, 100)))
def test_clock_drift_bound(u, w, offset, rate):
    u, v = sorted((u, w))
    clk = ClockModel(0, rate, offset)
    diff = span(clock_read(clk, v), clock_read(clk, u))
    rho = Fraction(1, 100)
    assert (1 - rho) * (v - u) <= diff <= (1 + rho) * (v - u)


@given(st.integers(0, 10**6), st.integers(0, 10**5), local, st.sampled_from([1, Fraction(999, 1000), Fraction(1001, 1000)]))
def test_real_of_inverts_read(t, back, offset, rate):
    clk = ClockModel(0, rate, offset)
    now = t + back
    assert clk.real_of(clk.read(t), now) == t


@given(st.integers(1, 20), st.integers(0, 6), st.integers(1, 5))
def test_constants_invariants(f_extra, f, d):
    n = 3 * f + f_extra
    c = derive_constants(n, f, d)
    assert c.phi == c.tau_skew + 2 * d
    assert c.d_agr == (2 * f + 1) * c.phi
    assert c.d_rmv == c.d_agr + c.d_zero
    assert c.d_stb == 2 * c.d_reset
    assert c == derive_constants(n, f, d)


msgs = st.builds(Message, st.sampled_from([Kind.SUPPORT, Kind.APPROVE, Kind.READY]), st.integers(0, 6),
                 st.just(0), st.sampled_from([b"a", b"b"]), origin=st.just(-1), round=st.just(0))


@given(st.lists(st.tuples(st.integers(0, 1000), msgs)), st.sampled_from(["first", "latest"]))
def test_log_one_entry_per_key(entries, keep):
    log = TimestampedLog(keep)
    for t, m in entries:
        log.add(t, m)
    keys = {(m.kind, m.value, m.sender) for _, m in entries}
    assert len(log) == len(keys)
    for kind, value, sender in keys:
        stamps = [t for t, m in entries if (m.kind, m.value, m.sender) == (kind, value, sender)]
        assert log.senders(kind, value)[sender] == (stamps[0] if keep == "first" else stamps[-1])


@given(st.lists(st.tuples(st.integers(0, 1000), msgs)), st.integers(0, 1000), st.integers(0, 500))
def test_log_decay_leaves_only_window(entries, now, horizon):
    log = TimestampedLog()
    for t, m in entries:
        log.add(t, m)
    log.decay(now, horizon)
    assert all(0 <= now - a <= horizon for a, _ in log.entries())


writes = st.lists(st.tuples(st.integers(0, 50), st.one_of(st.none(), st.integers(0, 9))), max_size=12)


@given(writes, st.integers(0, 60))
def test_history_zero_lookback_is_current(ws, extra):
    cell = HistoryCell(20)
    now = 0
    for dt, v in ws:
        now += dt
        cell.set(now, v)
    assert cell.at(now + extra, 0) == cell.current


@given(writes, st.integers(0, 20))
def test_history_matches_replay(ws, lookback):
    cell = HistoryCell(20)
    log = []
    now = 0
    for dt, v in ws:
        now += dt
        cell.set(now, v)
        log.append((now, v))
    q = now - lookback
    expect = None
    for t, v in log:
        if t <= q:
            expect = v
    assert cell.at(now, lookback) == expect


chains = st.dictionaries(st.integers(1, 4), st.sets(st.integers(0, 5), max_size=4), max_size=4)


@settings(max_examples=300)
@given(chains, st.integers(1, 4))
def test_distinct_chain_matches_brute_force(rounds, r):
    choices = [sorted(rounds.get(i, ())) for i in range(1, r + 1)]
    brute = any(len(set(c)) == r for c in itertools.product(*choices))
    assert has_distinct_chain(rounds, r) == brute
