import re


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion after the run."""
    lines = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            nodeid = getattr(rep, "nodeid", "")
            if not hasattr(rep, "when") or "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            n = int(re.search(r"test_criterion_(\d+)", nodeid).group(1))
            recorded = [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
            if recorded:
                lines[n] = recorded[-1]
            elif rep.failed and n not in lines:
                lines[n] = f"[FAIL] criterion {n}: {rep.when} error in {nodeid.split('::')[-1]}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
