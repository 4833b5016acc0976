import numpy as np
import pytest

from tokenlink import Graph

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "criterion", None)
    if number is not None:
        _CRITERIA.setdefault(number, []).append((report.outcome, report.criterion_title))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion, rep.criterion_title = mark.args[0], mark.args[1]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        results = _CRITERIA[number]
        ok = all(o == "passed" for o, _ in results)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {results[0][1]}")


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def k4():
    return Graph.from_edges(4, [(a, b) for a in range(4) for b in range(a + 1, 4)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
