from __future__ import annotations

import pytest

# acceptance verdicts, filled in by test_acceptance.record()
VERDICTS: list[str] = []


@pytest.fixture
def verdicts():
    return VERDICTS


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
