import pytest

_RESULTS: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test still asserts on its own."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _RESULTS[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        passed, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
