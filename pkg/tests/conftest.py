import os

import pytest
from hypothesis import HealthCheck, settings

from avgraph.config import load_fixture

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def m2():
    return load_fixture("m2")


@pytest.fixture(scope="session")
def m3():
    return load_fixture("m3")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
