from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_results: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _results.setdefault(number, {"title": title, "failed": False, "skipped": False, "ran": False})
    if report.failed:
        entry["failed"] = True
    elif report.when == "call" and report.passed:
        entry["ran"] = True
    elif report.skipped:
        entry["skipped"] = True


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        if entry["failed"]:
            status = "FAIL"
        elif entry["ran"]:
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"AC{number} {status} {entry['title']}")
