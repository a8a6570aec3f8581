import numpy as np
import pytest

from hpa_dyn.models import GUPTA_PARAMS, GRLevel
from hpa_dyn.services.model import linearize, solve_equilibria


@pytest.fixture(scope="session")
def params():
    return GUPTA_PARAMS


@pytest.fixture(scope="session")
def equilibria(params):
    return solve_equilibria(params)


@pytest.fixture(scope="session")
def high(equilibria):
    return next(e for e in equilibria if e.gr_level is GRLevel.HIGH)


@pytest.fixture(scope="session")
def medium(equilibria):
    return next(e for e in equilibria if e.gr_level is GRLevel.MEDIUM)


@pytest.fixture(scope="session")
def high_coeffs(params, high):
    return linearize(params, high)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
