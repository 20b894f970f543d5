from __future__ import annotations

import pytest

ACCEPTANCE_MODULE = "test_acceptance.py"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.acceptance_label = (item.function.__doc__ or item.name).strip().splitlines()[0] \
        if item.nodeid.split("::")[0].endswith(ACCEPTANCE_MODULE) else None


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in collection order."""
    verdicts: dict[str, tuple[str, str, str]] = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            label = getattr(rep, "acceptance_label", None)
            if label is None:
                continue
            if rep.when == "call" or rep.outcome != "passed":
                detail = dict(rep.user_properties).get("detail", "")
                verdicts[rep.nodeid] = ("PASS" if rep.outcome == "passed" else "FAIL", label, detail)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(verdicts):
        status, label, detail = verdicts[nodeid]
        terminalreporter.write_line(f"{status}  {label}" + (f"  [{detail}]" if detail else ""))
