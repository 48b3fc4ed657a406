"""Shared pytest wiring: acceptance-criterion summary lines."""

import re

_ACCEPT_PATTERN = re.compile(r"test_criterion_(\d+)_(\w+)")
_results: dict[str, tuple[int, str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    match = _ACCEPT_PATTERN.search(report.nodeid)
    if not match:
        return
    number, name = int(match.group(1)), match.group(2)
    _results[report.nodeid] = (number, name, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number, name, outcome in sorted(_results.values()):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({name}): {status}")
