"""Shared fixtures: small analytic mixtures and schedules used across tests."""

import numpy as np
import pytest

from modeseek import (GaussianMixture, build_spiral, build_pinwheel,
                      build_fractal, make_schedule, VARIANCE_EXPLODING,
                      VARIANCE_PRESERVING)


@pytest.fixture(scope="session")
def spiral():
    return build_spiral()


@pytest.fixture(scope="session")
def pinwheel():
    return build_pinwheel()


@pytest.fixture(scope="session")
def fractal():
    return build_fractal()


@pytest.fixture(scope="session")
def single_gaussian():
    """Isotropic Gaussian centered at the origin with std 0.3."""
    return GaussianMixture(np.array([1.0]), np.zeros((1, 2)),
                           0.09 * np.eye(2)[None])


@pytest.fixture(scope="session")
def two_blob():
    """Two well-separated isotropic components."""
    return GaussianMixture(np.array([0.4, 0.6]),
                           np.array([[-0.8, 0.0], [0.8, 0.3]]),
                           np.tile(0.02 * np.eye(2), (2, 1, 1)))


@pytest.fixture(scope="session")
def ve_schedule():
    return make_schedule(VARIANCE_EXPLODING, 32, 0.002, 2.0)


@pytest.fixture(scope="session")
def vp_schedule():
    return make_schedule(VARIANCE_PRESERVING, 32, 0.002, 0.995)
