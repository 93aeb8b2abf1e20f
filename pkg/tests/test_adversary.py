"""Strategy construction, equivocation split and end-to-end behaviour of the nastier strategies."""

from __future__ import annotations

import random

import pytest

from ssbyz.adversary import STRATEGIES, EquivocatingGeneral, View, adv_step, make_strategy
from ssbyz.checker import check_trace
from ssbyz.core import ConfigError, Kind, derive_constants
from ssbyz.engine import sim_run
from ssbyz.scenario import parse_scenario
from ssbyz.sweep import adv_sweep

from .conftest import D


def view(node=0, seed=0, n=4):
    consts = derive_constants(n, 1, D)
    return View(node, n, 1, 0, consts, tuple(i for i in range(n) if i != node), (node,), random.Random(seed))


def test_unknown_strategy():
    with pytest.raises(ConfigError):
        make_strategy("Teleport")


def test_unknown_parameter():
    with pytest.raises(ConfigError):
        make_strategy("Flood", {"speed": "3"})


def test_bad_parameter_value():
    with pytest.raises(ConfigError):
        make_strategy("EquivocatingGeneral", {"gap": "soon"})


def test_equivocation_two_values_two_blocks():
    seen = set()
    for seed in range(20):
        v = view(seed=seed)
        s = EquivocatingGeneral()
        s.start(v)
        groups = s._groups
        assert sorted(q for g in groups for q in g) == [0, 1, 2, 3] and [len(g) for g in groups] == [2, 2]
        seen.add(tuple(map(tuple, groups)))
        first = adv_step(s, v, 20 * D)
        second = adv_step(s, v, 23 * D)
        assert {x.to for x in first} == set(groups[0]) and {x.msg.value for x in first} == {b"a"}
        assert {x.to for x in second} == set(groups[1]) and {x.msg.value for x in second} == {b"b"}
    assert ((0, 1), (2, 3)) in seen


@pytest.mark.parametrize("name", sorted(STRATEGIES))
def test_strategies_speak_as_themselves(name):
    v = view(node=3)
    s = make_strategy(name)
    s.start(v)
    for t in v.wakeups[:3] or [0]:
        for send in adv_step(s, v, t):
            assert send.msg.sender == 3


def test_sender_stamped_by_transport():
    # even a forged sender field is overwritten with the true identity
    cfg = parse_scenario(
        "horizon = 40\nrole.3 = byzantine r\nstrategy.r = Random start_at=1 period=2\n"
        'script.1 = "5 initiate m"\n')
    tr = sim_run(cfg)
    assert check_trace(tr, cfg).passed


def test_silent_general_yields_no_decision():
    cfg = parse_scenario("horizon = 80\nrole.0 = byzantine s\nstrategy.s = SilentGeneral start_at=5\n")
    tr = sim_run(cfg)
    assert not tr.of_kind("decide") and not tr.of_kind("iaccept")


def test_equivocation_keeps_anchor_separation():
    cfg = parse_scenario(
        "horizon = 150\nrole.0 = byzantine g\n"
        "strategy.g = EquivocatingGeneral values=a,b start_at=20 gap=3 period=30\n")
    summary = adv_sweep(cfg, range(10))
    assert summary.passes == 10 and summary.violations("IA-4A") == 0


def test_sweep_rejects_invalid_topology():
    cfg = parse_scenario("horizon = 10\n")
    cfg.n, cfg.f = 4, 2
    with pytest.raises(ConfigError):
        adv_sweep(cfg, range(1))
