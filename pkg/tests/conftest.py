import sys
import warnings

import pytest
from hypothesis import HealthCheck, settings

from lrssb.model import RegimeWarning

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_regime():
    # most fixtures use accuracy targets above the guarantee regime on purpose
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
