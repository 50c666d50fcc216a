"""Shared pytest hooks: collect acceptance verdicts and print them after the run."""

import pytest

_REPORT = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_REPORT] = {}


@pytest.fixture(scope="session")
def acceptance_report(request):
    return request.config.stash[_REPORT]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    report = config.stash.get(_REPORT, {})
    if report:
        terminalreporter.section("acceptance criteria")
        for number in sorted(report):
            terminalreporter.write_line(report[number])
