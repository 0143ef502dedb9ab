"""Per-criterion pass/fail summary for the acceptance module."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::.*test_c(\d+)_")
_outcomes: dict[int, list[tuple[str, str, str, str]]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        reason = ""
        if report.outcome != "passed" and report.longrepr is not None:
            text = getattr(report.longrepr, "reprcrash", None)
            reason = text.message if text is not None else str(report.longrepr)
            reason = reason.splitlines()[0][:200] if reason else ""
        notes = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        _outcomes.setdefault(int(m.group(1)), []).append(
            (report.nodeid.split("::")[-1], report.outcome, reason, notes))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(_outcomes):
        results = _outcomes[c]
        ok = all(r[1] == "passed" for r in results)
        passed = sum(r[1] == "passed" for r in results)
        tr.write_line(f"C{c}: {'PASS' if ok else 'FAIL'} ({passed}/{len(results)} checks)")
        for name, outcome, reason, notes in results:
            detail = reason if outcome != "passed" else ""
            if notes:
                detail = f"{detail} [{notes}]" if detail else notes
            if detail:
                tr.write_line(f"    {name} {outcome.upper()}: {detail}")
