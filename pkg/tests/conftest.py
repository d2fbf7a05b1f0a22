"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

CRITERIA = {
    1: "DAG penalty properties",
    2: "gradient suite",
    3: "flow correctness",
    4: "discovery, identifiable case",
    5: "discovery, non-identifiable case",
    6: "end-to-end ATE accuracy",
    7: "true-graph inference",
    8: "estimator consistency oracle",
    9: "missing data",
    10: "augmented Lagrangian schedule",
    11: "HMC oracle",
    12: "metric fixtures",
    13: "reproducibility",
}

_outcomes: dict[int, list[tuple[str, str, list]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): test belongs to acceptance criterion k")
    config.addinivalue_line("markers", "slow: trains models; minutes rather than seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "passed" if rep.passed else ("skipped" if rep.skipped else "failed")
        notes = [f"{k}={v}" for k, v in item.user_properties]
        _outcomes.setdefault(marker.args[0], []).append((item.name, status, notes))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        runs = _outcomes.get(k)
        if not runs:
            continue
        statuses = {s for _, s, _ in runs}
        verdict = "FAIL" if "failed" in statuses else ("SKIP" if statuses == {"skipped"} else "PASS")
        notes = "; ".join(n for _, _, ns in runs for n in ns)
        line = f"criterion {k:2d} {verdict}  {CRITERIA[k]}"
        terminalreporter.write_line(line + (f"  [{notes}]" if notes else ""))
