import re


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", rep.nodeid)
            if m:
                num, name = int(m.group(1)), m.group(2)
                status = "PASS" if outcome == "passed" else "FAIL"
                rows[num] = (status, name)
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for num in sorted(rows):
            status, name = rows[num]
            terminalreporter.write_line(f"ACCEPTANCE {num:2d} {status}  {name}")
