import numpy as np
import pytest

from privutil.core import SensorDataset
from privutil.dataio import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_dataset() -> SensorDataset:
    return generate_synthetic(SyntheticSpec(n_users=60, n_days=4), seed=11)


@pytest.fixture
def unit_dataset():
    """Four users, two periods of four slots, every reading 1.0."""
    return SensorDataset(np.ones((4, 8)), slots_per_period=4)


_CRITERIA: dict[int, list] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA.setdefault(mark.args[0], [mark.args[1], []])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and (report.when == "call" or report.failed or report.skipped):
        _CRITERIA[mark.args[0]][1].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, results = _CRITERIA[number]
        status = "NOT RUN" if not results else "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
