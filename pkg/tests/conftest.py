import numpy as np
import pytest

from tomodisp.layers import accommodation_grid, layer_grid
from tomodisp.optics import OtfBank


@pytest.fixture(scope="session")
def small_bank():
    """10 layers over (0, 5.5] D seen from 11 accommodation planes."""
    return OtfBank(accommodation_grid(11), layer_grid(10))


@pytest.fixture(scope="session")
def medium_bank():
    return OtfBank(accommodation_grid(13), layer_grid(12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
