"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        status = "FAIL"
        message = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        detail = (detail + "; " if detail else "") + message.splitlines()[0]
    else:
        status = "SKIP" if rep.skipped else "PASS"
    _results[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_results):
        status, title, detail = _results[number]
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}" + (f" -- {detail}" if detail else ""))
