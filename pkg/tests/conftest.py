"""Shared test plumbing.

The acceptance tests report one PASS/FAIL line per numbered criterion; the
lines are echoed into the terminal summary so they are visible even when
output capture is on.
"""

import pytest


@pytest.fixture
def criterion(request):
    """Record and print `CRITERION <n>: PASS/FAIL - <details>` for one check."""

    def report(num: int, ok: bool, details: str) -> bool:
        line = f"CRITERION {num}: {'PASS' if ok else 'FAIL'} - {details}"
        lines = getattr(request.config, "_criterion_lines", None)
        if lines is None:
            lines = []
            request.config._criterion_lines = lines
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
