import pytest

_LINES: list[str] = []


@pytest.fixture()
def report_criterion():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion for the run summary."""

    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)
        _LINES.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
