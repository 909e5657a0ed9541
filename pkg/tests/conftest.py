import numpy as np
import pytest

from utils.coneop import laplace_type
from utils.traces import oracle_spectrum

ORACLE_CUT = 4e4


@pytest.fixture(scope="session")
def laplace():
    return laplace_type()


@pytest.fixture(scope="session")
def oracle(laplace):
    """Exact spectrum of the unperturbed model below 4e4."""
    return oracle_spectrum(laplace, ORACLE_CUT)


@pytest.fixture(scope="session")
def heat_grid():
    return np.geomspace(1e-3, 1e-1, 60)
