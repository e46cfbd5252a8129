import pytest

_CRITERIA = {
    1: "gradient correctness",
    2: "overfit smoke",
    3: "transfer warm-start",
    4: "frozen immutability",
    5: "checkpoint round-trip",
    6: "determinism",
    7: "numerical invariants",
    8: "full-scale reproduction",
}
_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion a test belongs to")


def pytest_runtest_logreport(report):
    marks = getattr(report, "_criterion", None)
    if marks is None:
        return
    if report.when == "call" or report.outcome in ("failed", "skipped"):
        _outcomes.setdefault(marks, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result()._criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    seen = _outcomes
    if not seen:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in _CRITERIA.items():
        outcomes = seen.get(n)
        if not outcomes:
            continue
        if "failed" in outcomes:
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {n} ({title}): {verdict}")
