from __future__ import annotations

import math

import pytest

from driftstop.problem import build_problem

# hand-derived constants for the GEO instance (mu = sigma = x, quadratic costs, c = 1):
# w = 2 s^2 solves w^2 + 2w - 4 = 0, so s^2 = (sqrt(5) - 1) / 2
GEO_S2 = (math.sqrt(5.0) - 1.0) / 2.0
GEO_S = math.sqrt(GEO_S2)
GEO_U = -GEO_S2  # u* = xi(-2 s^2) = -s^2
GEO_V2 = GEO_S2 + 2.0 * GEO_S2 * math.log(2.0 / GEO_S)
GEO_TAU2 = 2.0 / (1.0 + 2.0 * GEO_S2) * math.log(2.0 / GEO_S)


def qc_config(c: float = 1.0) -> dict:
    return {
        "drift": {"family": "constant", "m": 1.0},
        "dispersion": {"family": "constant", "sigma0": 1.0},
        "terminal": {"family": "quadratic", "kappa": 1.0},
        "running": {"family": "quadratic", "beta": 1.0},
        "c": c,
    }


def geo_config(c: float = 1.0) -> dict:
    return {
        "drift": {"family": "power", "a": 1.0, "scale": 1.0},
        "dispersion": {"family": "power", "b": 1.0, "scale": 1.0},
        "terminal": {"family": "quadratic", "kappa": 1.0},
        "running": {"family": "quadratic", "beta": 1.0},
        "c": c,
    }


def logcosh_config(c: float = 0.5) -> dict:
    cfg = qc_config(c)
    cfg["terminal"] = {"family": "logcosh", "kappa": 1.0}
    return cfg


@pytest.fixture
def qc():
    return build_problem(qc_config())


@pytest.fixture
def geo():
    return build_problem(geo_config())


@pytest.fixture
def logcosh():
    return build_problem(logcosh_config())


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
