import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.failed:
        detail = (detail + " " if detail else "") + f"({report.when} failed)"
    _RESULTS[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
