import pytest

# one line per acceptance criterion, filled by tests/test_acceptance.py
CRITERIA_LINES: dict = {}


@pytest.fixture
def criterion(capsys):
    """``criterion(n, ok, detail)`` records and prints a pass/fail line."""
    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        CRITERIA_LINES[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[n])
