import pytest

# Lines recorded by test_acceptance.py, printed once at the end of the session.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(label: str, ok: bool, detail: str, asserted: bool = True) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        if not asserted:
            line += " (reported, not asserted)"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if asserted:
            assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
