"""Shared pytest hooks: the acceptance gate's end-of-run verdict section."""

VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if VERDICTS:
        terminalreporter.section("acceptance gate")
        for line in VERDICTS:
            terminalreporter.write_line(line)
