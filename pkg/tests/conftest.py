"""Prints one PASS/FAIL line per acceptance criterion at the end of a run."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_results = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("measured", "")
        _results[int(m.group(1))] = (m.group(2), report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        name, outcome, detail = _results[n]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        line = f"criterion {n} {name}: {verdict}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
