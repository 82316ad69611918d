import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=30,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# -- acceptance summary -----------------------------------------------------------

CRITERIA = {
    1: "derivative correctness against finite differences",
    2: "pointwise distortion identities",
    3: "CG matches dense solves",
    4: "iLDLT(0) exact on fill-free patterns",
    5: "preconditioner switch examples",
    6: "forcing safeguards on every trace",
    7: "unit steps in the quadratic basin",
    8: "comparative benchmark, Line 2D degrees 1 and 2",
    9: "pre-adapted start",
    10: "quality improvement",
    11: "ordering oracles",
    12: "validity of every accepted iterate",
}
_outcomes: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            state = "xfail"
        else:
            state = "pass" if rep.passed else "fail"
        _outcomes.setdefault(mark.args[0], []).append((item.name, state))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        parts = _outcomes.get(n)
        if not parts:
            continue
        passed = sum(s == "pass" for _, s in parts)
        status = "PASS" if passed == len(parts) else "FAIL"
        line = f"criterion {n:2d}: {status}  {title} ({passed}/{len(parts)} checks pass)"
        missing = [name for name, s in parts if s != "pass"]
        if missing:
            line += "; not met: " + ", ".join(f"{m} [{s}]" for m, s in zip(missing, (s for _, s in parts if s != "pass")))
        tr.write_line(line)
