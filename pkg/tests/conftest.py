import time

import numpy as np
import pytest

ACCEPTANCE_KEY = pytest.StashKey[list]()
ACCEPTANCE_MODULE = "test_acceptance.py"
_SESSION: dict = {}


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []
    _SESSION.update(start=time.perf_counter(), outcomes={}, collected=[])


def pytest_collection_modifyitems(session, config, items):
    # acceptance last, so its runtime check sees the whole session
    items.sort(key=lambda item: item.path.name == ACCEPTANCE_MODULE)
    _SESSION["collected"] = [item.nodeid for item in items]


def pytest_runtest_logreport(report):
    if report.when != "call" and report.outcome == "passed":
        return
    if hasattr(report, "wasxfail"):
        outcome = "xfailed" if report.skipped else "xpassed"
    else:
        outcome = report.outcome
    if _SESSION["outcomes"].get(report.nodeid) in (None, "passed"):
        _SESSION["outcomes"][report.nodeid] = outcome


@pytest.fixture(scope="session")
def session_record(request):
    """Start time, collected node ids and per-test outcomes of the running session."""
    return _SESSION


@pytest.fixture
def report(request):
    """Record one acceptance line: ``report(number, passed, detail)``."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def _add(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return _add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
