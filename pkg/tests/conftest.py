"""Shared pytest hooks.

The acceptance tests register one PASS/FAIL line each; printing them from the
terminal-summary hook keeps them visible under pytest's fd-level capture.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
