import os

import pytest
from hypothesis import HealthCheck, settings

from stpn_hybrid.cli import load_model
from stpn_hybrid.stpn import default_target

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def four():
    net = load_model("four_activities")
    return net, default_target(net)


@pytest.fixture(scope="session")
def dft_net():
    net = load_model("dft")
    return net, default_target(net)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
