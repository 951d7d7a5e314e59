"""Shared fixtures: seeded random SPD suites and golden-file locations."""
from pathlib import Path

import numpy as np
import pytest

from dcgsim.applications import random_spd_rows
from dcgsim.network import random_connected_network

FIXTURES = Path(__file__).parent / "fixtures"


def spd_case(seed):
    """One suite member: ``(net, rows, a, b)`` with ``n`` drawn from 2..20."""
    n = int(np.random.default_rng(seed).integers(2, 21))
    net = random_connected_network(n, seed)
    rows, a, b = random_spd_rows(net, seed)
    return net, rows, a, b


def central_cg(a, b, epsilon, t_max):
    """Textbook conjugate gradient that recomputes ``r = A x - b`` every
    iteration. Returns ``(x, [(r^T r, alpha), ...])``."""
    x = np.zeros_like(b)
    d = np.zeros_like(b)
    rr_prev = None
    history = []
    for _ in range(t_max):
        r = a @ x - b
        rr = float(r @ r)
        if rr < epsilon:
            break
        beta = 0.0 if rr_prev is None else rr / rr_prev
        d = -r + beta * d
        alpha = -float(d @ r) / float(d @ (a @ d))
        x = x + alpha * d
        history.append((rr, alpha))
        rr_prev = rr
    return x, history


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# acceptance verdicts, printed one line per criterion after the run
VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, ok, detail):
        VERDICTS[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        ok, detail = VERDICTS.get(number, (False, "no verdict recorded (test errored or was deselected)"))
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
