import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def acceptance():
    """Record (and print) one summary line per acceptance criterion."""

    def record(key: str, ok: bool, text: str) -> None:
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {text}"
        ACCEPTANCE[key] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
            terminalreporter.write_line(ACCEPTANCE[key])
