import re

import pytest

_DETAILS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}
_NAME = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


@pytest.fixture
def criterion():
    """Record a measured value for an acceptance criterion, then assert it."""
    def record(number: int, ok: bool, detail: str) -> None:
        _DETAILS[number] = detail
        assert ok, detail
    return record


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m or (report.when != "call" and report.passed):
        return
    n = int(m.group(1))
    status = "SKIP" if report.skipped else "PASS" if report.passed else "FAIL"
    if _OUTCOMES.get(n) in (None, "PASS") or status == "FAIL":
        _OUTCOMES[n] = status


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        terminalreporter.write_line(f"criterion {n}: {_OUTCOMES[n]}  {_DETAILS.get(n, '')}")
