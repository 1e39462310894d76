import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion, printed whether or not it passed."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None) if module else None
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, passed, detail in sorted(results):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {num} ({name}): {status}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
