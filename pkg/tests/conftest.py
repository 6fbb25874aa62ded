import pytest

# (criterion number, passed, detail) appended by the acceptance suite
ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, then assert it."""
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE.append((number, passed, detail))
        print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
