import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(LINES):
            terminalreporter.write_line(LINES[cid])
