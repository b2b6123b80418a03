import numpy as np
import pytest

from qptorus.model import make_duffing, FrequencyVector
from qptorus.harmonics import HarmonicScheme
from qptorus.integrator import shutdown_pools


SQRT2_INV = 1.0 / np.sqrt(2.0)


@pytest.fixture(scope="session", autouse=True)
def _pool_cleanup():
    yield
    shutdown_pools()


@pytest.fixture
def duffing_forced():
    return make_duffing(1.0, 0.1, 1.0, forcing=[(0.3, 1), (0.2, 2)])


@pytest.fixture
def linear_forced():
    return make_duffing(1.0, 0.4, 0.0, forcing=[(0.3, 1), (0.2, 2)])


@pytest.fixture
def freq_d2():
    w1 = 1.9
    return FrequencyVector(np.array([w1, w1 * SQRT2_INV]), 2)


@pytest.fixture
def scheme_d2():
    return HarmonicScheme([[0, 1, 2, 3]])


@pytest.fixture
def scheme_small():
    return HarmonicScheme([[0, 1]])
