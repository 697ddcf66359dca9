import os

from hypothesis import HealthCheck, settings

import _report

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def _order(key):
    return (0, key, "") if isinstance(key, int) else (1, 99, key)


def pytest_terminal_summary(terminalreporter):
    if not _report.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_report.LINES, key=_order):
        terminalreporter.write_line(_report.LINES[key])
