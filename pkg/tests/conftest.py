"""Shared fixtures: acceptance-criterion reporting."""

import pytest

_RESULTS = []


@pytest.fixture()
def acceptance():
    """Record one pass/fail line per acceptance criterion.

    Tests record the computed outcome before asserting, so the summary
    shows every criterion even when one fails.
    """

    def record(criterion: str, passed: bool, detail: str):
        _RESULTS.append((criterion, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")
