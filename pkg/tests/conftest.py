"""Shared fixtures plus the acceptance-criteria result banner."""

from __future__ import annotations

import pytest

from helpers import ingest_excerpt, ingest_raw

_results: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, title): ties a test to one numbered acceptance criterion",
    )
    config.addinivalue_line(
        "markers",
        "live: exercises the live backend; opt in via TERMINATORS_LIVE_SMOKE=1",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, title = marker.args
    if report.when == "call":
        _results[num] = (title, "PASS" if report.passed else "FAIL")
    elif report.when == "setup" and not report.passed:
        _results[num] = (title, "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        title, verdict = _results[num]
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {title}")


@pytest.fixture()
def excerpt_doc():
    return ingest_excerpt()


@pytest.fixture()
def raw_doc():
    return ingest_raw()
