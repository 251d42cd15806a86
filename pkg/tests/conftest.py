"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_outcomes: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = props.get("detail", "")
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _outcomes.append((props["criterion"], report.outcome.upper(), detail))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome, detail in _outcomes:
        verdict = {"PASSED": "PASS", "FAILED": "FAIL", "SKIPPED": "SKIP"}.get(outcome, outcome)
        terminalreporter.write_line(f"{verdict:4}  {name}" + (f"  [{detail}]" if detail else ""))
