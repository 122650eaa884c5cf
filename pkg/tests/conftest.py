import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def report_criterion(capsys):
    """Record and print the one-line verdict of an acceptance criterion."""

    def record(number: int, passed: bool, detail: str):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        _LINES[number] = line
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
