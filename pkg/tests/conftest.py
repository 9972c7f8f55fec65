from pathlib import Path

import numpy as np
import pytest

from djensemble.grid import STGrid

_criteria: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    item_marker = getattr(report, "_criterion", None)
    if item_marker is None:
        return
    number, title = item_marker
    if report.when == "call" or report.outcome == "failed":
        prev = _criteria.get(number, (title, "PASS"))[1]
        status = "FAIL" if report.outcome == "failed" or prev == "FAIL" else "PASS"
        _criteria[number] = (title, status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result()._criterion = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid(rng):
    return STGrid(rng.normal(20.0, 2.0, size=(6, 8, 40)))


@pytest.fixture
def datadir():
    return Path(__file__).parent / "data"
