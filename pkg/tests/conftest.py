import re

import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def _order(line):
    m = re.match(r"C(\d+) ", line)
    return (0, int(m.group(1))) if m else (1, line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=_order):
        terminalreporter.write_line(line)
