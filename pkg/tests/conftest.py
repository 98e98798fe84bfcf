import pytest
from hypothesis import settings

from macblocks.simcore import TimingParams

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def timing():
    # pinned explicitly so tests do not drift with library defaults
    return TimingParams(slot_sec=2e-4, sifs_sec=5e-5, difs_sec=1e-4, phy_header_sec=2e-5,
                        ack_bytes=14, rts_bytes=20, cts_bytes=14, mac_header_bytes=34,
                        retry_limit=7)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
