import numpy as np
import pytest

from biphoton_edge.campaign import prepare_model
from biphoton_edge.lattice import HaldaneSpec, QheSpec

# (criterion number, title) -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def haldane_model():
    return prepare_model(HaldaneSpec())


@pytest.fixture(scope="session")
def qhe_model():
    return prepare_model(QheSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), (passed, detail) in sorted(ACCEPTANCE.items()):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {num:>2}. {title}: {detail}")
