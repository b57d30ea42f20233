import os

import numpy as np
import pytest

from twoscale_llg.cell import solve_cell_problems
from twoscale_llg.coefficients import make_preset

FULL = os.environ.get("TWOSCALE_FULL") == "1"


def pytest_collection_modifyitems(config, items):
    if FULL:
        return
    skip = pytest.mark.skip(reason="full-resolution run; set TWOSCALE_FULL=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def cosine2d():
    """Product-cosine coefficients with their 128^2 cell solutions."""
    coeffs = make_preset("cosine2d")
    cells, homog = solve_cell_problems(coeffs, 128)
    return coeffs, cells, homog


@pytest.fixture(scope="session")
def cosine2d_coarse():
    coeffs = make_preset("cosine2d")
    cells, homog = solve_cell_problems(coeffs, 32)
    return coeffs, cells, homog


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line; returns ``ok`` so the caller can assert on it."""
    def record(label, ok, detail):
        VERDICTS.append((label, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, ok, detail in sorted(VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
