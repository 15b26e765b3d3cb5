"""Collects the one-line acceptance verdicts and repeats them at the end of the run."""
import pytest

_LINES = []


@pytest.fixture
def verdict():
    def emit(criterion: int, name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:2d} {name}: {detail}"
        print(line)
        _LINES.append(line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
