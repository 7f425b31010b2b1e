"""Shared test plumbing: the acceptance-criteria result banner.

Each acceptance test records exactly one PASS/FAIL line; they are echoed
in the terminal summary so the verdicts are visible even when everything
passes and pytest swallows per-test stdout.
"""

import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(line: str):
        _LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
