import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the per-criterion verdict lines after the run summary."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
