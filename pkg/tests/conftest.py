import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
