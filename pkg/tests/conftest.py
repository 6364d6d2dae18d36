import pytest

# (criterion number, passed, detail) recorded by the acceptance tests
ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def report():
    def record(n: int, passed: bool, detail: str):
        ACCEPTANCE.append((n, bool(passed), detail))
        print(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
