import numpy as np
import pytest

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _criteria.append((number, status, title))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    grouped = {}
    for number, status, title in _criteria:
        cases = grouped.setdefault(number, {"title": title, "statuses": []})
        cases["statuses"].append(status)
    terminalreporter.section("acceptance criteria")
    for number in sorted(grouped):
        statuses = grouped[number]["statuses"]
        status = "FAIL" if "FAIL" in statuses else ("SKIP" if "SKIP" in statuses else "PASS")
        cases = f" ({len(statuses)} cases)" if len(statuses) > 1 else ""
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {grouped[number]['title']}{cases}")
