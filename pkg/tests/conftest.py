import pytest

from brwpass.models import gauss_ref, latt_ref

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def gauss():
    return gauss_ref()


@pytest.fixture(scope="session")
def latt():
    return latt_ref()


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""
    def _record(number, title, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}"
        if detail:
            line += f" | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
