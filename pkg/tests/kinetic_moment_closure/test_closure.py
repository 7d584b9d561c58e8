"""Tests for ansatz evaluation, flux and collision moments and the P_N closure."""

import numpy as np
import pytest

from kinetic_moment_closure.closure import (
    CollisionKernel,
    collision_ansatz_part,
    collision_moments,
    eval_ansatz,
    flux_moments,
    pn_ansatz,
    pn_closure_flux,
    pn_flux_matrix,
)
from kinetic_moment_closure.errors import AnsatzOverflowError, InvalidArgumentError
from kinetic_moment_closure.moments import isotropic_moments, moments_of_density
from kinetic_moment_closure.quadrature import build_angular


def test_eval_ansatz_batched_with_scale(angular_m1):
    alpha = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
    psi = eval_ansatz(alpha, angular_m1, np.array([2.0, 1.0]))
    assert psi.shape == (2, angular_m1.n_total)
    np.testing.assert_allclose(psi[0], 2.0)
    np.testing.assert_allclose(psi[1], 3.0)


def test_eval_ansatz_overflow(angular_m1):
    with pytest.raises(AnsatzOverflowError):
        eval_ansatz(np.array([0.0, 701.0]), angular_m1)


def test_flux_moments_shift_the_moment_index(angular_m3):
    """For monomials <mu m_i psi> = u_{i+1}."""
    psi = np.exp(0.7 * angular_m3.mu)
    flux = flux_moments(psi, angular_m3)
    q5 = build_angular(40, 4)
    u = moments_of_density(q5, np.exp(0.7 * q5.mu))
    np.testing.assert_allclose(flux, u[1:], rtol=1e-13)


def test_flux_moments_checks_length(angular_m3):
    with pytest.raises(InvalidArgumentError):
        flux_moments(np.ones(3), angular_m3)


class TestCollisionKernel:
    def test_isotropic_gain_is_half_the_density(self, angular_m3):
        kernel = CollisionKernel.isotropic(angular_m3)
        psi = np.exp(angular_m3.mu)
        gain = collision_ansatz_part(psi, kernel, angular_m3)
        expected = 0.5 * (psi @ angular_m3.weights)
        np.testing.assert_allclose(gain, expected, rtol=1e-14)

    def test_collision_conserves_mass(self, angular_m3, rng):
        kernel = CollisionKernel.from_function(
            angular_m3, lambda mu, mu_in: 1.0 + 0.5 * mu * mu_in
        )
        psi = rng.uniform(0.1, 2.0, size=(6, angular_m3.n_total))
        c = collision_moments(psi, kernel, angular_m3)
        np.testing.assert_allclose(c[:, 0], 0.0, atol=1e-14)

    def test_isotropic_collision_moments(self, angular_m3):
        """C(psi) of an isotropic density vanishes; odd moments decay at rate 1."""
        kernel = CollisionKernel.isotropic(angular_m3)
        iso = np.full(angular_m3.n_total, 0.5)
        np.testing.assert_allclose(collision_moments(iso, kernel, angular_m3), 0.0, atol=1e-15)
        psi = 1.0 + 0.5 * angular_m3.mu
        u = moments_of_density(angular_m3, psi)
        c = collision_moments(psi, kernel, angular_m3)
        np.testing.assert_allclose(c, isotropic_moments(3) * u[0] - u, atol=1e-14)

    def test_columns_normalized(self, angular_m3):
        kernel = CollisionKernel.from_function(angular_m3, lambda mu, mu_in: np.exp(mu * mu_in))
        np.testing.assert_allclose(angular_m3.weights @ kernel.matrix, 1.0, rtol=1e-14)

    def test_gain_nonnegative(self, angular_m3, rng):
        kernel = CollisionKernel.from_function(angular_m3, lambda mu, mu_in: 2.0 + mu)
        psi = rng.uniform(0.0, 1.0, size=angular_m3.n_total)
        assert np.all(collision_ansatz_part(psi, kernel, angular_m3) >= 0.0)

    def test_rejects_non_positive_kernel(self, angular_m1):
        with pytest.raises(InvalidArgumentError):
            CollisionKernel.from_function(angular_m1, lambda mu, mu_in: mu * mu_in)

    def test_rejects_wrong_shape(self, angular_m1):
        with pytest.raises(InvalidArgumentError):
            CollisionKernel.from_values(angular_m1, np.ones((3, 3)))


class TestPnClosure:
    def test_p1_flux(self):
        """P_1 with monomials: flux (u_1, u_0 / 3)."""
        np.testing.assert_allclose(pn_closure_flux(np.array([3.0, 0.6])), [0.6, 1.0])

    @pytest.mark.parametrize("n_moments", [1, 3, 5])
    def test_flux_matrix_bases_agree_on_polynomials(self, n_moments, rng):
        """Both bases give the flux <mu m p> of the same polynomial p."""
        q_mon = build_angular(2 * (n_moments + 2), n_moments)
        q_leg = build_angular(2 * (n_moments + 2), n_moments, basis="legendre")
        coeffs = rng.normal(size=n_moments + 1)
        p = coeffs @ q_mon.basis_at_nodes
        for q in (q_mon, q_leg):
            u = (p * q.weights) @ q.basis_at_nodes.T
            expected = (p * q.mu * q.weights) @ q.basis_at_nodes.T
            np.testing.assert_allclose(
                pn_closure_flux(u, q.basis), expected, atol=1e-12
            )

    def test_legendre_flux_matrix_tridiagonal(self):
        a = pn_flux_matrix(3, "legendre")
        np.testing.assert_allclose(
            a,
            [
                [0.0, 1.0, 0.0, 0.0],
                [1 / 3, 0.0, 2 / 3, 0.0],
                [0.0, 2 / 5, 0.0, 3 / 5],
                [0.0, 0.0, 3 / 7, 0.0],
            ],
        )

    def test_pn_ansatz_reproduces_moments(self, rng):
        q = build_angular(14, 5, basis="legendre")
        u = rng.normal(size=(4, 6))
        psi = pn_ansatz(u, q)
        assert psi.shape == (4, q.n_total)
        np.testing.assert_allclose((psi * q.weights) @ q.basis_at_nodes.T, u, atol=1e-12)

    def test_pn_ansatz_may_be_negative(self):
        q = build_angular(8, 1)
        psi = pn_ansatz(np.array([1.0, 0.9]), q)
        assert psi.min() < 0.0
