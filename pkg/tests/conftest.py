import re

_outcomes: dict[int, str] = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_criterion_(\d+)_", report.nodeid)
    if not match:
        return
    n = int(match.group(1))
    if report.when == "call" or report.outcome != "passed":
        if _outcomes.get(n) != "FAIL":
            _outcomes[n] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        terminalreporter.write_line(f"criterion {n}: {_outcomes[n]}")
