import numpy as np
import pytest

from dvq.series import TimeSeries

_criteria = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for number, title in getattr(report, "criterion", ()):
        _criteria[number] = (title, report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marks = [(m.args[0], m.args[1]) for m in item.iter_markers("criterion")]
    rep.criterion = marks


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome = _criteria[number]
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome)
        terminalreporter.write_line(f"AC{number:>2} {status:4}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sine_series():
    rng = np.random.default_rng(7)
    t = np.arange(1200)
    return TimeSeries.from_values(10 + np.sin(0.2 * t) + 0.05 * rng.normal(size=t.size))
