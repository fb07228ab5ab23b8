"""Collects acceptance-criterion outcomes and prints one line per criterion."""

from __future__ import annotations

from collections import defaultdict

CRITERIA = {
    1: "LUT oracle equivalence",
    2: "stability postcondition, every engine",
    3: "topology preservation at lambda=0",
    4: "idempotence and monotonicity",
    5: "filtering behavior (peaks, ridge ends)",
    6: "queue integrity and interleaving safety",
    7: "formula reproduction",
    8: "performance trend (needs >= 4 cores)",
}

_criterion_of: dict[str, int] = {}
_outcomes: dict[int, list[tuple[str, str, str]]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criterion_of[item.nodeid] = m.args[0]


def pytest_runtest_logreport(report):
    n = _criterion_of.get(report.nodeid)
    if n is None:
        return
    details = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    if report.skipped:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        _outcomes[n].append(("SKIP", report.nodeid, reason.removeprefix("Skipped: ")))
    elif report.failed:
        _outcomes[n].append(("FAIL", report.nodeid, details))
    elif report.when == "call":
        _outcomes[n].append(("PASS", report.nodeid, details))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            tr.write_line(f"criterion {n}: NOT RUN  {title}")
            continue
        states = {r[0] for r in results}
        verdict = "FAIL" if "FAIL" in states else "PASS" if "PASS" in states else "SKIP"
        notes = [r[2] for r in results if r[2] and (verdict != "PASS" or r[0] == "PASS")]
        line = f"criterion {n}: {verdict}  {title}"
        if notes:
            line += "  [" + " | ".join(notes) + "]"
        tr.write_line(line)
