from __future__ import annotations

from collections import defaultdict

import pytest

N_CRITERIA = 13
_outcomes: dict = defaultdict(list)
_criterion_of: dict = {}


def pytest_runtest_logreport(report):
    if report.nodeid not in _criterion_of:
        return
    if report.when == "call" or report.outcome == "failed":
        _outcomes[report.nodeid].append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _criterion_of[item.nodeid] = int(mark.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _criterion_of:
        return
    status = {}
    for nodeid, crit in _criterion_of.items():
        results = _outcomes.get(nodeid)
        if not results:
            continue
        ok = all(r == "passed" for r in results)
        status[crit] = status.get(crit, True) and ok
    terminalreporter.section("acceptance criteria")
    for crit in range(1, N_CRITERIA + 1):
        if crit in status:
            terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if status[crit] else 'FAIL'}")
        else:
            terminalreporter.write_line(f"criterion {crit:2d}: NOT RUN")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
