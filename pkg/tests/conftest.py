import random

import pytest

from pitpm.group import PROD, TEST


def pytest_configure(config):
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        entry = item.config._criteria.setdefault(number, {"title": title, "failed": [], "ran": 0})
        entry["ran"] += 1
        if not rep.passed:
            entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        entry = criteria[number]
        status = "FAIL" if entry["failed"] else "PASS"
        line = f"criterion {number:>2}: {status}  {entry['title']}"
        if entry["failed"]:
            line += f"  (failing: {', '.join(entry['failed'])})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return random.Random(20240611)


@pytest.fixture(params=[TEST, PROD], ids=["test", "prod"])
def group(request):
    return request.param
