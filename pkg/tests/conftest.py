import numpy as np
import pytest
from scipy.stats import unitary_group


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scipy_unitary(d, seed):
    """Haar unitary from scipy, used as an independent reference sampler."""
    return unitary_group.rvs(d, random_state=seed)


def random_hermitian(d, rng):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (a + a.conj().T) / 2
