"""Collects acceptance-criterion outcomes and prints them as one block."""

import pytest


def pytest_configure(config):
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        item.config._criteria.append((status, marker.args[0], detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in config._criteria:
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
