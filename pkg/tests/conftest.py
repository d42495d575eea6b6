import pytest

_RESULTS = {}


@pytest.fixture
def report(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        _RESULTS[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[k])
