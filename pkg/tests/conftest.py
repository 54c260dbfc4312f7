import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record a one-line acceptance verdict; the verdict is printed at the end of the session."""

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
