import numpy as np
import pytest

from kfplab.discrete_complex import GridSpec, assemble_complex
from kfplab.landscape import classify_landscape, find_critical_points, get_model


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def dw1():
    return get_model("DW1")


@pytest.fixture
def dw2():
    return get_model("DW2")


@pytest.fixture
def witten():
    return get_model("witten-DW1")


@pytest.fixture
def dw1_points(dw1):
    return find_critical_points(dw1)


@pytest.fixture
def dw1_wells(dw1_points):
    return classify_landscape(dw1_points)


@pytest.fixture
def small_complex(dw1):
    # coarse 2-D complex, large enough for the structural identities
    h = 0.3
    grid = GridSpec((2.5, 2.5), (24, 24))
    return assemble_complex(grid, dw1, h)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
