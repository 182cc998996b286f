"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

from collections import defaultdict

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tcqed.config import load_config

settings.register_profile("tcqed", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tcqed")

ACCEPTANCE_TITLES = {
    1: "sqrt(N) scaling of the collective splitting",
    2: "single-qubit Rabi splitting of qubit 1",
    3: "three-level transition lines and map maxima",
    4: "crosstalk calibration and compensation",
    5: "background round trip and lineshape symmetry",
    6: "signal model recovery and gamma halving",
    7: "dispersive drift vs exact diagonalization",
    8: "property suites, Jacobians and steady-state checks",
}

_outcomes: dict[int, list[str]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test belongs to acceptance criterion n")


def pytest_runtest_logreport(report):
    crit = getattr(report, "acceptance", None)
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[crit].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance = int(marker.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE_TITLES.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  ({title}; {len(results or [])} tests)")


@pytest.fixture(scope="session")
def paper_config():
    return load_config("paper-device")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
