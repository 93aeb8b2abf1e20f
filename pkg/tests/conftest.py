"""Shared fixtures: tick-scaled constants and the scenario directory."""

from __future__ import annotations

from pathlib import Path

import pytest

from ssbyz.core import TICKS_PER_D, derive_constants

D = TICKS_PER_D
SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


@pytest.fixture
def c41():
    return derive_constants(4, 1, D)


@pytest.fixture
def c72():
    return derive_constants(7, 2, D)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
