"""Tests for the WENO reconstruction and ghost cells."""

import math

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from kinetic_moment_closure.config import WenoConfig
from kinetic_moment_closure.errors import InvalidArgumentError
from kinetic_moment_closure.quadrature import build_spatial
from kinetic_moment_closure.weno import (
    DirichletBoundary,
    PeriodicBoundary,
    candidate_polynomials,
    edge_weights,
    fill_ghosts,
    reconstruct_cells,
    reconstruct_edges,
    weno_stencils,
)


def _poly_means(coeffs, left, right):
    """Exact averages of sum c_a x**a over [left, right]."""
    total = np.zeros_like(left)
    for a, c in enumerate(coeffs):
        total = total + c * (right ** (a + 1) - left ** (a + 1)) / (a + 1)
    return total / (right - left)


def _periodic_windows(means, k):
    padded = np.concatenate([means[len(means) - (k - 1) :], means, means[: k - 1]])
    return sliding_window_view(padded, 2 * k - 1)


class TestLinearWeights:
    def test_third_order(self):
        st = weno_stencils(2)
        np.testing.assert_allclose(st.gamma_right, [2 / 3, 1 / 3], atol=1e-13)
        np.testing.assert_allclose(st.gamma_left, [1 / 3, 2 / 3], atol=1e-13)

    def test_fifth_order(self):
        st = weno_stencils(3)
        np.testing.assert_allclose(st.gamma_right, [0.3, 0.6, 0.1], atol=1e-13)
        np.testing.assert_allclose(st.gamma_left, [0.1, 0.6, 0.3], atol=1e-13)

    @pytest.mark.parametrize("k", [2, 3, 4, 5, 6, 7])
    def test_weights_positive_and_sum_to_one(self, k):
        st = weno_stencils(k)
        tol = 1e-10 if k <= 5 else 1e-6
        for gamma in (st.gamma_right, st.gamma_left):
            assert gamma.sum() == pytest.approx(1.0, abs=tol)
            assert np.all(gamma > 0)

    @pytest.mark.parametrize("k", [0, 8])
    def test_order_out_of_range(self, k):
        with pytest.raises(InvalidArgumentError):
            weno_stencils(k)


class TestCandidatePolynomials:
    def test_reproduces_quadratic(self):
        dx = 0.2
        coeffs = [0.3, -1.0, 2.0]
        x_j = 1.0
        lefts = x_j + dx * (np.arange(-1, 2) - 0.5)
        means = _poly_means(coeffs, lefts, lefts + dx)
        local = candidate_polynomials(means, dx=dx, shift=1)
        # expand c(x) around x_j
        expected = [0.3 - 1.0 * x_j + 2.0 * x_j**2, -1.0 + 4.0 * x_j, 2.0]
        np.testing.assert_allclose(local, expected, atol=1e-12)

    def test_invalid_shift(self):
        with pytest.raises(InvalidArgumentError):
            candidate_polynomials(np.ones(3), shift=3)


class TestReconstruction:
    @pytest.mark.parametrize("k", [2, 3, 5, 7])
    def test_polynomial_data_reproduced_pointwise(self, k, rng):
        """Means of a degree k-1 polynomial give back the polynomial."""
        coeffs = rng.normal(size=k)
        tol = 1e-10 if k <= 5 else 1e-8
        n = 30
        left = np.arange(n, dtype=float) - n / 2
        means = _poly_means(coeffs, left / n, (left + 1) / n)
        window = sliding_window_view(means, 2 * k - 1)
        centers = (left + 0.5) / n
        center = centers[k - 1 : n - k + 1]
        p_right, p_left, right, left_c = reconstruct_edges(window, WenoConfig(k=k))
        poly = np.polynomial.Polynomial(coeffs)
        np.testing.assert_allclose(p_right, poly(center + 0.5 / n), atol=tol)
        np.testing.assert_allclose(p_left, poly(center - 0.5 / n), atol=tol)
        xi = np.linspace(-0.5, 0.5, 7)
        values = right @ np.vander(xi, k, increasing=True).T
        np.testing.assert_allclose(values, poly(center[:, None] + xi / n), atol=tol)
        np.testing.assert_allclose(left_c, right, atol=tol)

    def test_constant_data(self):
        window = np.full((4, 5), 2.5)
        p_right, p_left, _, _ = reconstruct_edges(window, WenoConfig(k=3))
        np.testing.assert_allclose(p_right, 2.5)
        np.testing.assert_allclose(p_left, 2.5)

    def test_first_order_is_piecewise_constant(self):
        window = np.array([[1.0], [4.0]])
        p_right, p_left, _, _ = reconstruct_edges(window, WenoConfig(k=1))
        np.testing.assert_array_equal(p_right, [1.0, 4.0])
        np.testing.assert_array_equal(p_left, [1.0, 4.0])

    def test_window_length_checked(self):
        with pytest.raises(InvalidArgumentError):
            reconstruct_edges(np.ones(4), WenoConfig(k=3))

    @pytest.mark.parametrize("k", [2, 3])
    def test_edge_values_converge_at_design_order(self, k):
        """Linear-weight limit reaches order 2k - 1 on smooth periodic data."""
        cfg = WenoConfig(k=k, epsilon=100.0)
        errors = []
        widths = []
        for n in (20, 40, 80):
            dx = 2 * math.pi / n
            edges = np.arange(n + 1) * dx
            means = (np.cos(edges[:-1]) - np.cos(edges[1:])) / dx
            p_right, _, _, _ = reconstruct_edges(_periodic_windows(means, k), cfg)
            errors.append(np.max(np.abs(p_right - np.sin(edges[1:]))))
            widths.append(dx)
        order = math.log(errors[1] / errors[2]) / math.log(widths[1] / widths[2])
        assert order >= 2 * k - 1 - 0.5

    def test_weights_concentrate_away_from_jump(self):
        """Substencils crossing a discontinuity get negligible weight."""
        window = np.array([0.0, 0.0, 0.0, 1.0, 1.0])
        w_right, w_left = edge_weights(window, WenoConfig(k=3))
        # only the left-most substencil is smooth
        assert w_right[2] > 0.99
        assert w_left[2] > 0.99

    def test_smoothness_indicator_third_order(self):
        """beta of a two-cell stencil is the squared difference of its means."""
        window = np.array([1.0, 2.0, 4.0])
        cfg = WenoConfig(k=2)
        w_right, _ = edge_weights(window, cfg)
        beta = np.array([(4.0 - 2.0) ** 2, (2.0 - 1.0) ** 2])
        alpha = np.array([2 / 3, 1 / 3]) / (cfg.epsilon + beta) ** 2
        np.testing.assert_allclose(w_right, alpha / alpha.sum(), rtol=1e-10)


class TestGhosts:
    def test_periodic(self):
        means = np.arange(5.0)[:, None]
        ext = fill_ghosts(means, PeriodicBoundary(), 2)
        assert ext[:, 0].tolist() == [3.0, 4.0, 0.0, 1.0, 2.0, 3.0, 4.0, 0.0, 1.0]

    def test_periodic_needs_enough_cells(self):
        with pytest.raises(InvalidArgumentError):
            fill_ghosts(np.ones((2, 3)), PeriodicBoundary(), 3)

    def test_dirichlet(self):
        means = np.ones((3, 2))
        bc = DirichletBoundary(left=np.array([5.0, 6.0]), right=np.array([7.0, 8.0]))
        ext = fill_ghosts(means, bc, 2)
        assert ext.shape == (7, 2)
        np.testing.assert_array_equal(ext[:2], [[5.0, 6.0], [5.0, 6.0]])
        np.testing.assert_array_equal(ext[-2:], [[7.0, 8.0], [7.0, 8.0]])


class TestCellReconstruction:
    def _build(self, k=3, n=12, n_q=4):
        spatial = build_spatial(k, 1)
        x = np.arange(n + 2 * k, dtype=float)
        means_ext = np.exp(0.1 * x)[:, None] * np.linspace(1.0, 2.0, n_q)[None, :]
        direction = np.array([-1.0, 0.0, 0.0, 1.0])[:n_q]
        return reconstruct_cells(means_ext, WenoConfig(k=k), spatial, direction), means_ext, spatial

    def test_shapes_include_one_ghost_per_side(self):
        recon, _, spatial = self._build()
        assert recon.means.shape == (14, 4)
        assert recon.coeffs_right.shape == (14, 4, 3)
        assert recon.interior.shape == (14, 4, spatial.n_nodes)
        assert recon.edge_left_minus.shape == (12, 4)
        assert recon.edge_right_plus.shape == (12, 4)

    def test_means_are_the_central_cells(self):
        recon, means_ext, _ = self._build()
        np.testing.assert_array_equal(recon.means, means_ext[2:-2])

    def test_interior_endpoints_match_edges_by_direction(self):
        recon, _, _ = self._build()
        # mu > 0 uses the right-targeted polynomial, mu < 0 the left-targeted one
        np.testing.assert_allclose(recon.interior[:, 3, -1], recon.edge_right_minus[:, 3])
        np.testing.assert_allclose(recon.interior[:, 0, 0], recon.edge_left_plus[:, 0])

    def test_interior_average_is_the_mean(self):
        recon, _, spatial = self._build()
        np.testing.assert_allclose(recon.interior @ spatial.weights, recon.means, rtol=1e-12)

    def test_scaled_preserves_means(self):
        recon, _, spatial = self._build()
        theta = np.full(recon.means.shape, 0.25)
        scaled = recon.scaled(theta)
        np.testing.assert_allclose(scaled.interior @ spatial.weights, recon.means, rtol=1e-12)
        np.testing.assert_allclose(scaled.theta, 0.25)
        np.testing.assert_allclose(
            scaled.evaluate(spatial.nodes), scaled.interior, rtol=1e-12
        )

    def test_scaled_to_zero_is_flat(self):
        recon, _, _ = self._build()
        flat = recon.scaled(np.zeros(recon.means.shape))
        np.testing.assert_allclose(flat.edge_right_minus, recon.means)
        np.testing.assert_allclose(flat.coeffs_left[..., 1:], 0.0)
