import re

_RESULTS: dict[int, tuple[str, str]] = {}
_NODE = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    m = _NODE.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    summary = dict(report.user_properties).get("summary", "")
    if report.when == "call" or report.failed or report.skipped:
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        if n not in _RESULTS or status != "PASS":
            _RESULTS[n] = (status, summary or _RESULTS.get(n, ("", ""))[1])


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    from .test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        status, summary = _RESULTS.get(n, ("NOT RUN", ""))
        line = f"{status:<7} criterion {n}: {CRITERIA[n]}"
        if summary:
            line += f" [{summary}]"
        terminalreporter.write_line(line)
