"""Shared fixtures and the acceptance-summary reporter.

Acceptance tests record one line per criterion; the hook below replays them
in the terminal summary so the pass/fail ledger is visible even when pytest
captures stdout.
"""

import numpy as np
import pytest

from grvq.model import QuantModel


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    def _record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
        request.config._acceptance_lines.append(line)
        print(line)

    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_model(rng, m=3, k=4, d=8, eps_mode="stored"):
    return QuantModel(rng.standard_normal((m, k, d)), eps_mode=eps_mode)


@pytest.fixture
def tiny_model(rng):
    return random_model(rng)
