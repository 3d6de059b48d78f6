import pytest
from hypothesis import HealthCheck, settings

from raro_sim.flash import FlashModel
from raro_sim.ftl import FTL, Geometry

settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_geometry():
    return Geometry(channels=1, luns_per_channel=2, planes_per_lun=1, blocks_per_plane=8)


@pytest.fixture
def small_ftl(small_geometry):
    # half the QLC capacity is logical space
    return FTL(small_geometry, FlashModel(), logical_pages=8 * 1024)
