import numpy as np
import pytest

from funcgan.laplace import assemble, spectrum
from funcgan.measure import gaussian_density


@pytest.fixture(scope="session")
def hermite():
    """Standard Gaussian on [-10, 10] with 2001 points and its first 65 modes."""
    op = assemble(gaussian_density(0.0, 1.0, (-10, 10), 2001))
    return op, spectrum(op, 65)


@pytest.fixture(scope="session")
def coarse_gauss():
    """N(0, 1) on [-6, 6], h = 0.2; cheap enough for explicit stepping with penalties."""
    op = assemble(gaussian_density(0.0, 1.0, (-6, 6), 61))
    return op, spectrum(op, 61)


@pytest.fixture(scope="session")
def wide_gauss():
    """N(0, 4) on [-12, 12], 61 points; continuum xi_min = 1/4."""
    op = assemble(gaussian_density(0.0, 4.0, (-12, 12), 61))
    return op, spectrum(op, 61)


@pytest.fixture(scope="session")
def gauss2d():
    op = assemble(gaussian_density([0.0, 0.0], [1.0, 4.0], [(-6, 6), (-12, 12)], [31, 41]))
    return op, spectrum(op, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
