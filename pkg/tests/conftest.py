"""Shared pytest wiring.

The acceptance tests register one verdict line per criterion; printing
them from the terminal-summary hook keeps the lines visible even though
pytest captures stdout of passing tests.
"""

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance verdicts")
    for line in VERDICTS:
        terminalreporter.write_line(line)
