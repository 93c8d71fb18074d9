import sys

import numpy as np
import pytest

from sll.surface import FlatTorus, UnitSphere


@pytest.fixture(scope="session")
def sphere():
    return UnitSphere(32, 64)


@pytest.fixture(scope="session")
def sphere64():
    return UnitSphere(64, 128)


@pytest.fixture(scope="session")
def torus():
    return FlatTorus(1.0, 1.3, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
