import pytest

# criterion number -> (passed, detail); filled by the acceptance tests
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def log(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(_line(number, passed, detail))

    return log


def _line(number, passed, detail):
    return f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(_line(number, passed, detail))
