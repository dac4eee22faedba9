import pytest

_verdicts = []


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(number, ok, detail)."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _verdicts.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_verdicts, key=lambda v: v[0]):
        terminalreporter.write_line(line)
