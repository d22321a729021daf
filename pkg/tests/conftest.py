import numpy as np
import pytest

from fabloop.kinematics import ArmGeometry


@pytest.fixture
def geom():
    # arbitrary fixture lengths, not measured arm values
    return ArmGeometry(d1=126.0, a2=300.0, a3=300.0, d6=90.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n][1])
