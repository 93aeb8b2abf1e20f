"""Pinned seeds that once broke a property, and the configuration that breaks them again."""

from __future__ import annotations

import os
import subprocess
import sys
from dataclasses import replace
from fractions import Fraction

import pytest

from ssbyz.sweep import run_one
from ssbyz.scenario import load_scenario

from .conftest import SCENARIOS


def scn(name):
    return load_scenario(SCENARIOS / f"{name}.scn")


@pytest.mark.parametrize("name,seed,broken", [
    # only the General meets a 4d window; the others can never decide
    ("stabilize", 124, {"Agreement", "Validity"}),
    # a slow node falls through to the broadcast rounds and misses the 4d deadline
    ("random_relay", 0, {"T2"}),
])
def test_direct_window_of_4d_is_too_narrow(name, seed, broken):
    cfg = scn(name)
    assert run_one(cfg, seed).passed
    narrow = run_one(replace(cfg, direct_window=Fraction(4)), seed)
    assert broken <= set(narrow.failed)


@pytest.mark.parametrize("name,seed", [
    ("random", 19),     # chain of a faulty non-General once decided a foreign value
    ("random", 40),     # a fizzled invocation was tied to a later execution
    ("random", 210),    # late ready quorum gave an i-accept with a 36d-old anchor
    ("random", 251),
    ("random_relay", 19),
])
def test_pinned_seeds_pass(name, seed):
    res = run_one(scn(name), seed, diagnostics=True)
    assert res.passed and not res.diagnostics_failed, (res.failed, res.diagnostics_failed)


def test_equivocation_reaches_both_groups():
    res = run_one(scn("equivocating"), 0)
    assert res.passed and res.counts.get("iaccept", 0) > 0


def test_trace_independent_of_hash_seed(tmp_path):
    digests = set()
    for hs in ("0", "1", "12345"):
        env = dict(os.environ, PYTHONHASHSEED=hs)
        r = subprocess.run([sys.executable, "-m", "ssbyz", "run", "--scenario", str(SCENARIOS / "random.scn"),
                            "--seed", "7"], capture_output=True, text=True, env=env)
        digests.add(next(line for line in r.stdout.splitlines() if line.startswith("trace sha256")))
    assert len(digests) == 1
