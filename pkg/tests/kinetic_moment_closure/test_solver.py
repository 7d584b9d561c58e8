"""Tests for the mesh, the semi-discrete operator and the run driver."""

import math

import numpy as np
import pytest

from kinetic_moment_closure.config import RunConfig
from kinetic_moment_closure.errors import InvalidArgumentError, RealizabilityError
from kinetic_moment_closure.moments import isotropic_moments, realizable_mask
from kinetic_moment_closure.problems import ManufacturedProblem, PlaneSourceProblem
from kinetic_moment_closure.quadrature import build_angular, build_spatial
from kinetic_moment_closure.solver import (
    KineticScheme,
    MaterialField,
    Mesh,
    SolverState,
    compute_dt,
    run,
    sample_cells,
    sample_solution,
)


def _small_config(**update) -> RunConfig:
    values = {"N": 1, "k": 2, "J": 10, "n_q": 8}
    values.update(update)
    return RunConfig(**values)


class TestMesh:
    def test_geometry(self):
        mesh = Mesh(-1.0, 1.0, 4)
        assert mesh.dx == 0.5
        np.testing.assert_allclose(mesh.centers, [-0.75, -0.25, 0.25, 0.75])
        np.testing.assert_allclose(mesh.edges, [-1.0, -0.5, 0.0, 0.5, 1.0])

    def test_nodes(self):
        mesh = Mesh(0.0, 1.0, 2)
        nodes = mesh.nodes(build_spatial(3, 1))
        np.testing.assert_allclose(nodes, [[0.0, 0.25, 0.5], [0.5, 0.75, 1.0]])

    def test_locate(self):
        mesh = Mesh(0.0, 1.0, 4)
        cells, xi = mesh.locate(np.array([0.0, 0.3, 1.0]))
        assert cells.tolist() == [0, 1, 3]
        np.testing.assert_allclose(xi, [-0.5, -0.3, 0.5])

    def test_locate_outside(self):
        with pytest.raises(InvalidArgumentError):
            Mesh(0.0, 1.0, 4).locate(np.array([1.5]))

    @pytest.mark.parametrize("args", [(1.0, 0.0, 4), (0.0, 1.0, 0)])
    def test_invalid(self, args):
        with pytest.raises(InvalidArgumentError):
            Mesh(*args)


class TestMaterialField:
    def test_rejects_negative_values(self):
        ones = np.ones((2, 3))
        with pytest.raises(InvalidArgumentError):
            MaterialField(sigma_a=-ones, sigma_s=ones, source=np.ones((2, 4, 3)))

    def test_piecewise_constant_sampling(self):
        mesh = Mesh(0.0, 1.0, 2)
        spatial = build_spatial(3, 1)
        q = build_angular(4, 1)
        field = MaterialField.from_functions(
            mesh,
            spatial,
            q,
            lambda x: x,
            lambda x: 2 * x,
            lambda x, mu: x + 0 * mu,
            piecewise_constant=True,
        )
        np.testing.assert_allclose(field.sigma_a, [[0.25] * 3, [0.75] * 3])
        assert field.source.shape == (2, 4, 3)
        assert field.sigma_t_max == pytest.approx(2.25)

    def test_node_sampling(self):
        mesh = Mesh(0.0, 1.0, 2)
        spatial = build_spatial(3, 1)
        field = MaterialField.from_functions(
            mesh,
            spatial,
            build_angular(4, 1),
            lambda x: x,
            np.zeros_like,
            lambda x, mu: np.ones(np.broadcast_shapes(x.shape, mu.shape)),
        )
        np.testing.assert_allclose(field.sigma_a, mesh.nodes(spatial))


class TestComputeDt:
    def test_streaming_limit(self):
        mesh = Mesh(0.0, 1.0, 10)
        spatial = build_spatial(1, 1)
        assert compute_dt(0.0, mesh, spatial, eps=0.01) == pytest.approx(0.99 * 0.05)

    def test_collision_limit(self):
        mesh = Mesh(0.0, 1.0, 10)
        spatial = build_spatial(1, 1)
        dxw = 0.05
        expected = 6.0 * 0.99 * dxw / (1.0 + dxw * 4.0)
        assert compute_dt(4.0, mesh, spatial, eps=0.01, rho=6.0) == pytest.approx(expected)

    def test_stiff_collision_limit(self):
        mesh = Mesh(0.0, 10.0, 1)
        spatial = build_spatial(1, 1)
        assert compute_dt(100.0, mesh, spatial, eps=0.0) <= 1.0 / 100.0

    def test_negative_sigma(self):
        with pytest.raises(InvalidArgumentError):
            compute_dt(-1.0, Mesh(0.0, 1.0, 2), build_spatial(1, 1), eps=0.01)


class TestKineticScheme:
    def test_isotropic_state_is_steady(self):
        problem = ManufacturedProblem(conservation=True)
        scheme = KineticScheme.from_config(problem, _small_config())
        u = np.tile(2.0 * isotropic_moments(1), (10, 1))
        u_eff, du = scheme.evaluate(0.0, u)
        np.testing.assert_allclose(u_eff, u, rtol=1e-12)
        np.testing.assert_allclose(du, 0.0, atol=1e-12)
        assert scheme.diagnostics.n_evaluations == 1

    def test_periodic_scattering_conserves_mass(self):
        problem = ManufacturedProblem(conservation=True)
        scheme = KineticScheme.from_config(problem, _small_config(k=3, N=3, n_q=16))
        u = problem.initial_moments(scheme.mesh, scheme.spatial, scheme.angular)
        _, du = scheme.evaluate(0.0, u)
        assert abs(du[:, 0].sum()) <= 1e-12 * np.abs(du[:, 0]).sum()

    def test_unrealizable_input(self):
        problem = ManufacturedProblem(conservation=True)
        scheme = KineticScheme.from_config(problem, _small_config())
        u = np.tile(isotropic_moments(1), (10, 1))
        u[7] = [1.0, 1.5]
        with pytest.raises(RealizabilityError) as info:
            scheme.evaluate(0.3, u)
        assert info.value.cells == (7,)
        assert info.value.time == 0.3

    def test_polynomial_closure_skips_realizability(self):
        problem = PlaneSourceProblem()
        cfg = _small_config(model="pN", k=1, N=1, limiter="off")
        scheme = KineticScheme.from_config(problem, cfg)
        assert scheme.angular.basis == "legendre"
        u = np.zeros((10, 2))
        u[:, 0] = 1.0
        u[3, 1] = 5.0
        u_eff, du = scheme.evaluate(0.0, u)
        np.testing.assert_array_equal(u_eff, u)
        assert np.all(np.isfinite(du))
        assert scheme.diagnostics.cells_closed == 0

    def test_state_keeps_warm_start_and_diagnostics(self):
        problem = ManufacturedProblem()
        scheme = KineticScheme.from_config(problem, _small_config(N=3, n_q=16))
        u = problem.initial_moments(scheme.mesh, scheme.spatial, scheme.angular)
        scheme.evaluate(0.0, u)
        warm = scheme.multipliers.copy()
        closed = scheme.diagnostics.cells_closed
        iterations = scheme.diagnostics.newton_iterations
        per_evaluation = list(scheme.diagnostics.iterations_per_evaluation)

        state = scheme.state(0.1, u + 0.01 * isotropic_moments(3))

        np.testing.assert_array_equal(scheme.multipliers, warm)
        assert scheme.diagnostics.cells_closed == closed
        assert scheme.diagnostics.newton_iterations == iterations
        assert scheme.diagnostics.iterations_per_evaluation == per_evaluation
        assert not np.array_equal(state.multipliers, warm)

    def test_sigma_t_bound_samples_time(self):
        scheme = KineticScheme.from_config(ManufacturedProblem(), _small_config())
        assert scheme.sigma_t_bound(0.0) <= 8.0
        assert scheme.sigma_t_bound(math.pi) == pytest.approx(8.0, rel=1e-2)


class TestRun:
    def test_short_manufactured_run(self):
        problem = ManufacturedProblem()
        cfg = _small_config(t_final=0.05, save_every=1)
        result = run(problem, cfg)
        assert result.n_steps * result.dt == pytest.approx(0.05)
        assert result.state.t == 0.05
        assert result.diagnostics.n_evaluations >= 20
        assert realizable_mask(result.state.moments).all()
        assert len(result.snapshots) == result.n_steps
        assert result.config is cfg

    def test_snapshots_do_not_change_the_run(self):
        problem = ManufacturedProblem()
        plain = run(problem, _small_config(t_final=0.05))
        saved = run(problem, _small_config(t_final=0.05, save_every=1))
        np.testing.assert_array_equal(saved.state.moments, plain.state.moments)
        assert saved.diagnostics.cells_closed == plain.diagnostics.cells_closed
        assert saved.diagnostics.newton_iterations == plain.diagnostics.newton_iterations

    def test_zero_final_time(self):
        problem = ManufacturedProblem()
        result = run(problem, _small_config(t_final=0.0))
        assert result.n_steps == 0
        expected = problem.initial_moments(
            result.state.mesh, build_spatial(2, 2), result.state.angular
        )
        np.testing.assert_allclose(result.state.moments, expected)

    def test_monitor_respects_forward_euler_limit(self):
        problem = ManufacturedProblem()
        cfg = _small_config(t_final=0.05)
        sizes = []
        result = run(problem, cfg, monitor=sizes.append)
        scheme = KineticScheme.from_config(problem, cfg)
        limit = compute_dt(
            scheme.sigma_t_bound(0.05), scheme.mesh, scheme.spatial, cfg.eps
        )
        assert sizes
        assert max(sizes) <= limit * (1 + 1e-12)
        assert result.dt > 0.0


class TestSampling:
    @pytest.fixture
    def state(self) -> SolverState:
        problem = ManufacturedProblem()
        return run(problem, _small_config(t_final=0.0)).state

    def test_centers_match_cell_sampling(self, state):
        at_centers = sample_solution(state, state.mesh.centers)
        per_cell = sample_cells(state, np.array([0.0]))[:, 0]
        np.testing.assert_allclose(at_centers, per_cell, rtol=1e-13, atol=1e-14)

    def test_cell_average_of_samples(self, state):
        spatial = build_spatial(2, 2)
        values = sample_cells(state, spatial.nodes)
        averaged = np.einsum("jpm,p->jm", values, spatial.weights)
        # closure tolerance, not quadrature error
        np.testing.assert_allclose(averaged, state.moments, rtol=1e-8, atol=1e-9)

    def test_outside_domain(self, state):
        with pytest.raises(InvalidArgumentError):
            sample_solution(state, np.array([10.0]))

    def test_needs_reconstruction(self, state):
        bare = SolverState(
            t=0.0,
            moments=state.moments,
            multipliers=state.multipliers,
            mesh=state.mesh,
            angular=state.angular,
        )
        with pytest.raises(InvalidArgumentError):
            sample_cells(bare, np.array([0.0]))
