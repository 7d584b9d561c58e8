"""Test utilities and fixtures."""

import numpy as np
import pytest

from kinetic_moment_closure.moments import moments_of_density
from kinetic_moment_closure.quadrature import AngularQuadrature, build_angular


def random_realizable_moments(
    q: AngularQuadrature, rng: np.random.Generator, count: int
) -> np.ndarray:
    """Moments of random positive densities on the nodes, normalized to u_0 = 1.

    The densities are exponentials of random polynomials, so every vector lies
    strictly inside the realizable set.
    """
    coeffs = rng.normal(scale=2.0, size=(count, q.n_moments + 1))
    exponent = coeffs @ q.basis_at_nodes
    exponent -= exponent.max(axis=-1, keepdims=True)
    u = moments_of_density(q, np.exp(exponent))
    return u / u[:, :1]


@pytest.fixture
def rng():
    """Seeded generator so randomized tests are reproducible."""
    return np.random.default_rng(20260317)


@pytest.fixture
def angular_m1():
    """M_1 quadrature with the default 40 nodes."""
    return build_angular(40, 1)


@pytest.fixture
def angular_m3():
    """M_3 quadrature with the default 40 nodes."""
    return build_angular(40, 3)


@pytest.fixture
def realizable_sample():
    """Factory for random realizable moment vectors."""
    return random_realizable_moments
