"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_OUTCOMES: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _OUTCOMES.setdefault(number, {"title": title, "passed": True, "ran": False, "detail": ""})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["passed"] = False
        msg = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") else str(report.longrepr)
        entry["detail"] = entry["detail"] or msg.splitlines()[0][:160]
    elif report.skipped:
        entry["passed"] = False
        entry["detail"] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        e = _OUTCOMES[number]
        status = "PASS" if e["passed"] and e["ran"] else "FAIL"
        line = f"criterion {number:>2} {status}  {e['title']}"
        if status == "FAIL" and e["detail"]:
            line += f"  ({e['detail']})"
        terminalreporter.write_line(line)
