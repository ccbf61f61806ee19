import numpy as np
import pytest

from app.models.netlist import Element, ElementKind, Netlist


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-system acceptance runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def element(id, kind, n1, n2, value=0.0):
    return Element(id=id, kind=ElementKind(kind), n1=n1, n2=n2, value=value)


@pytest.fixture
def rc_netlist():
    """1 V into R = 1 kOhm, C = 1 uF."""
    return Netlist(elements=[
        element("V1", "voltage_source", "in", "0", 1.0),
        element("R1", "resistor", "in", "out", 1e3),
        element("C1", "capacitor", "out", "0", 1e-6),
    ])


@pytest.fixture
def lc_netlist():
    return Netlist(elements=[
        element("C1", "capacitor", "a", "0", 1.0),
        element("L1", "inductor", "a", "0", 1.0),
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
