"""Semi-discrete moment operator, realizable time step and the full M_N run.

One evaluation of the right-hand side closes every cell (entropy optimizer
or polynomial ansatz), reconstructs the ansatz values per angular node with
WENO, limits them, and integrates the kinetic equation against the moment
basis: upwind fluxes at the cell edges plus the spatial quadrature of the
reaction terms.
"""

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .closure import CollisionKernel, collision_ansatz_part, eval_ansatz, pn_ansatz
from .config import LimiterConfig, OptimizerConfig, RunConfig, WenoConfig
from .entropy_optimizer import BatchResult, isotropic_multipliers, solve_cells
from .errors import InvalidArgumentError, RealizabilityError
from .limiters import LimiterStats, apply_limiter, cell_bounds
from .moments import realizable_mask
from .quadrature import AngularQuadrature, SpatialQuadrature, build_angular, build_spatial
from .time_integration import Integrator, tableau
from .weno import Boundary, CellReconstruction, fill_ghosts, reconstruct_cells

logger = logging.getLogger(__name__)

# time samples used to bound a time-dependent sigma_t
_SIGMA_T_SAMPLES = 100


@dataclass(frozen=True)
class Mesh:
    """Uniform grid of ``n_cells`` cells on ``[x_left, x_right]``."""

    x_left: float
    x_right: float
    n_cells: int

    def __post_init__(self) -> None:
        """Validate the extent and the cell count."""
        if not self.x_right > self.x_left:
            raise InvalidArgumentError("Mesh needs x_left < x_right")
        if self.n_cells < 1:
            raise InvalidArgumentError("Mesh needs at least one cell")

    @property
    def dx(self) -> float:
        """Cell width."""
        return (self.x_right - self.x_left) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        """Cell centers ``x_j``."""
        return self.x_left + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        """The ``n_cells + 1`` cell edges."""
        return self.x_left + np.arange(self.n_cells + 1) * self.dx

    def nodes(self, spatial: SpatialQuadrature) -> np.ndarray:
        """Spatial quadrature nodes ``x_j + dx * y_i`` of every cell, ``(J, nqs)``."""
        return self.centers[:, None] + self.dx * spatial.nodes[None, :]

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell index and reference coordinate of each point.

        Raises:
            InvalidArgumentError: If a point lies outside the domain.
        """
        points = np.atleast_1d(np.asarray(points, dtype=float))
        tol = 1e-12 * (self.x_right - self.x_left)
        if np.any(points < self.x_left - tol) or np.any(points > self.x_right + tol):
            raise InvalidArgumentError(
                f"Sample points must lie in [{self.x_left}, {self.x_right}]"
            )
        cells = np.clip(
            np.floor((points - self.x_left) / self.dx).astype(int), 0, self.n_cells - 1
        )
        xi = (points - self.centers[cells]) / self.dx
        return cells, np.clip(xi, -0.5, 0.5)


@dataclass(frozen=True)
class MaterialField:
    """Material coefficients and source at the spatial nodes.

    Attributes:
        sigma_a: Absorption ``(J, nqs)``.
        sigma_s: Scattering ``(J, nqs)``.
        source: Source ``(J, nQ, nqs)``.
    """

    sigma_a: np.ndarray
    sigma_s: np.ndarray
    source: np.ndarray

    def __post_init__(self) -> None:
        """Reject negative coefficients."""
        for name in ("sigma_a", "sigma_s", "source"):
            if np.any(getattr(self, name) < 0.0):
                raise InvalidArgumentError(f"{name} must be nonnegative")

    @property
    def sigma_t(self) -> np.ndarray:
        """Total cross section ``sigma_a + sigma_s``."""
        return self.sigma_a + self.sigma_s

    @property
    def sigma_t_max(self) -> float:
        """Maximum of ``sigma_t`` over cells and spatial nodes."""
        return float(self.sigma_t.max())

    @classmethod
    def from_functions(
        cls,
        mesh: Mesh,
        spatial: SpatialQuadrature,
        q: AngularQuadrature,
        sigma_a: Callable[[np.ndarray], np.ndarray],
        sigma_s: Callable[[np.ndarray], np.ndarray],
        source: Callable[[np.ndarray, np.ndarray], np.ndarray],
        *,
        piecewise_constant: bool = False,
    ) -> "MaterialField":
        """Sample coefficient functions of ``x`` (and ``mu`` for the source).

        Coefficients are sampled at the spatial nodes, or once per cell at its
        center when ``piecewise_constant`` is set.
        """
        x = mesh.nodes(spatial)
        if piecewise_constant:
            x = np.broadcast_to(mesh.centers[:, None], x.shape)
        shape = x.shape
        source_values = source(x[:, None, :], q.mu[None, :, None])
        return cls(
            sigma_a=np.broadcast_to(sigma_a(x), shape).astype(float),
            sigma_s=np.broadcast_to(sigma_s(x), shape).astype(float),
            source=np.broadcast_to(
                source_values, (shape[0], q.n_total, shape[1])
            ).astype(float),
        )


class Problem(Protocol):
    """What the solver needs to know about a test case."""

    name: str
    domain: tuple[float, float]
    t_final: float

    def coefficient_order(self, k: int) -> int:
        """Polynomial degree bound plus one of the coefficients, ``k_S``."""
        ...

    def kernel(self, q: AngularQuadrature) -> CollisionKernel:
        """Scattering kernel."""
        ...

    def boundary(self, t: float, q: AngularQuadrature) -> Boundary:
        """Ghost values at time ``t``."""
        ...

    def materials(
        self, t: float, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> MaterialField:
        """Coefficients at time ``t``."""
        ...

    def initial_moments(
        self, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> np.ndarray:
        """Cell means of the initial moments, ``(J, N + 1)``."""
        ...


def compute_dt(
    materials: MaterialField | float,
    mesh: Mesh,
    spatial: SpatialQuadrature,
    eps: float,
    rho: float = 1.0,
) -> float:
    """Realizability-preserving step taken with equality.

    ``dt = rho (1 - eps) min(1 / sigma_t_max, dx w / (1 + dx w sigma_t_max))``
    with ``w`` the endpoint weight of the spatial rule on the unit cell.

    Args:
        materials: Material field or directly ``sigma_t_max``.
        mesh: Grid.
        spatial: Spatial rule.
        eps: Optimizer tolerance ``epsilon``.
        rho: Radius of absolute monotonicity of the integrator.

    Returns:
        The step size.

    Raises:
        InvalidArgumentError: If ``sigma_t_max`` is negative.
    """
    if isinstance(materials, MaterialField):
        sigma_t_max = materials.sigma_t_max
    else:
        sigma_t_max = float(materials)
    if sigma_t_max < 0.0:
        raise InvalidArgumentError("sigma_t_max must be nonnegative")
    dxw = mesh.dx * spatial.end_weight
    bound = dxw / (1.0 + dxw * sigma_t_max)
    if sigma_t_max > 0.0:
        bound = min(1.0 / sigma_t_max, bound)
    return rho * (1.0 - eps) * bound


@dataclass
class SolverDiagnostics:
    """Running totals over all right-hand-side evaluations."""

    n_evaluations: int = 0
    cells_closed: int = 0
    newton_iterations: int = 0
    n_regularized: int = 0
    n_limited: int = 0
    min_theta: float = 1.0
    n_mean_out_of_bounds: int = 0
    iterations_per_evaluation: list[float] = field(default_factory=list)

    @property
    def mean_newton_iterations(self) -> float:
        """Newton iterations per closed cell."""
        return self.newton_iterations / self.cells_closed if self.cells_closed else 0.0

    def record_limiter(self, stats: LimiterStats) -> None:
        """Accumulate one limiter application."""
        self.n_limited += stats.n_limited
        self.min_theta = min(self.min_theta, stats.min_theta)
        self.n_mean_out_of_bounds += stats.n_mean_out_of_bounds


@dataclass(frozen=True)
class SolverState:
    """Solution at one time.

    Attributes:
        t: Time.
        moments: Cell means of the moments ``(J, N + 1)``.
        multipliers: Warm-start multipliers ``(J, N + 1)``.
        mesh: Grid the state lives on.
        angular: Angular quadrature and basis of the moments.
        reconstruction: Limited reconstruction of the physical cells and one
            ghost cell per side, when available.
    """

    t: float
    moments: np.ndarray
    multipliers: np.ndarray
    mesh: Mesh
    angular: AngularQuadrature
    reconstruction: CellReconstruction | None = None


class KineticScheme:
    """The semi-discrete operator ``L_h`` of one problem on one grid.

    Acts as a right-hand-side evaluator: :meth:`evaluate` returns the moments
    actually closed (regularized where needed) and their time derivative.
    """

    def __init__(
        self,
        problem: Problem,
        mesh: Mesh,
        angular: AngularQuadrature,
        spatial: SpatialQuadrature,
        optimizer: OptimizerConfig,
        weno: WenoConfig,
        limiter: LimiterConfig,
        *,
        model: str = "mN",
        threads: int = 1,
    ):
        """Set up the operator.

        Args:
            problem: Test case.
            mesh: Grid.
            angular: Angular quadrature and moment basis.
            spatial: Spatial rule on the unit cell.
            optimizer: Dual Newton parameters.
            weno: Reconstruction parameters.
            limiter: Limiter parameters.
            model: ``"mN"`` for the entropy closure or ``"pN"`` for the
                polynomial closure.
            threads: Worker threads of the optimizer.
        """
        self.problem = problem
        self.mesh = mesh
        self.angular = angular
        self.spatial = spatial
        self.optimizer = optimizer
        self.weno = weno
        self.limiter = limiter
        self.model = model
        self.threads = threads
        self.kernel = problem.kernel(angular)
        self.multipliers = np.tile(
            isotropic_multipliers(angular.n_moments), (mesh.n_cells, 1)
        )
        self.diagnostics = SolverDiagnostics()
        self._material_cache: tuple[float, MaterialField] | None = None

    @classmethod
    def from_config(cls, problem: Problem, cfg: RunConfig) -> "KineticScheme":
        """Build quadratures and mesh from a run configuration."""
        basis = "legendre" if cfg.model == "pN" else "monomial"
        angular = build_angular(cfg.n_q, cfg.n_moments, basis)
        spatial = build_spatial(cfg.k, problem.coefficient_order(cfg.k))
        mesh = Mesh(*problem.domain, cfg.n_cells)
        return cls(
            problem,
            mesh,
            angular,
            spatial,
            cfg.optimizer_config(),
            cfg.weno_config(),
            cfg.limiter_config(),
            model=cfg.model,
            threads=cfg.threads,
        )

    def materials(self, t: float) -> MaterialField:
        """Coefficients at time ``t``, reusing the last evaluation."""
        cached = self._material_cache
        if cached is not None and cached[0] == t:
            return cached[1]
        field_t = self.problem.materials(t, self.mesh, self.spatial, self.angular)
        self._material_cache = (t, field_t)
        return field_t

    def sigma_t_bound(self, t_final: float) -> float:
        """Maximum of ``sigma_t`` over the grid nodes and sampled times."""
        times = np.linspace(0.0, t_final, _SIGMA_T_SAMPLES) if t_final > 0 else [0.0]
        return max(
            self.problem.materials(float(t), self.mesh, self.spatial, self.angular).sigma_t_max
            for t in times
        )

    def check_realizable(self, u: np.ndarray, t: float) -> None:
        """Raise if a cell mean left the realizable set (entropy closure only).

        Raises:
            RealizabilityError: With the failing cells, the time and the
                evaluation counter.
        """
        if self.model != "mN":
            return
        ok = realizable_mask(u)
        if not ok.all():
            raise RealizabilityError(
                "Cell means are not realizable",
                cells=np.flatnonzero(~ok).tolist(),
                time=t,
                stage=self.diagnostics.n_evaluations,
            )

    def close(
        self, t: float, u: np.ndarray, *, record: bool = True
    ) -> tuple[np.ndarray, np.ndarray]:
        """Closed moments and ansatz values at the angular nodes.

        Args:
            t: Time of ``u``.
            u: Cell moments of shape ``(J, N + 1)``.
            record: Keep the multipliers as the next warm start and count the
                work in the diagnostics.

        Returns:
            ``(u_eff, psi)`` with ``psi`` of shape ``(J, nQ)``.
        """
        if self.model == "pN":
            return u, pn_ansatz(u, self.angular)
        result = self._solve(t, u)
        if record:
            self.multipliers = result.alpha_bar
            diag = self.diagnostics
            diag.cells_closed += u.shape[0]
            diag.newton_iterations += int(result.iterations.sum())
            diag.n_regularized += result.n_regularized
            diag.iterations_per_evaluation.append(float(result.iterations.mean()))
        return result.moments, eval_ansatz(result.alpha_bar, self.angular, result.scale)

    def _solve(self, t: float, u: np.ndarray) -> BatchResult:
        try:
            return solve_cells(
                u, self.multipliers, self.optimizer, self.angular, threads=self.threads
            )
        except RealizabilityError as e:
            raise RealizabilityError(
                "Optimizer failed at the largest regularization",
                cells=e.cells,
                time=t,
                stage=self.diagnostics.n_evaluations,
            ) from e

    def reconstruct(
        self, t: float, psi: np.ndarray
    ) -> tuple[CellReconstruction, LimiterStats]:
        """Limited reconstruction of node values ``psi`` with one ghost per side."""
        k = self.weno.k
        means_ext = fill_ghosts(psi, self.problem.boundary(t, self.angular), k + 1)
        recon = reconstruct_cells(
            means_ext[1:-1], self.weno, self.spatial, self.angular.direction
        )
        upper = lower = None
        if self.limiter.mode == "max_principle":
            upper, lower = cell_bounds(
                means_ext, k, self.limiter.effective_c(self.mesh.dx), self.mesh.dx
            )
        return apply_limiter(recon, self.limiter, upper=upper, lower=lower)

    def kinetic_rhs(
        self, t: float, recon: CellReconstruction
    ) -> np.ndarray:
        """Time derivative of the cell-mean kinetic values ``(J, nQ)``."""
        mu = self.angular.mu
        flux = (
            np.maximum(mu, 0.0) * recon.edge_right_minus[:-1]
            + np.minimum(mu, 0.0) * recon.edge_left_plus[1:]
        )
        transport = -(flux[1:] - flux[:-1]) / self.mesh.dx
        mats = self.materials(t)
        psi = recon.interior[1:-1]  # (J, nQ, nqs)
        gain = collision_ansatz_part(np.moveaxis(psi, 1, 2), self.kernel, self.angular)
        gain = np.moveaxis(gain, 2, 1)
        reaction = (
            -mats.sigma_t[:, None, :] * psi
            + mats.sigma_s[:, None, :] * gain
            + mats.source
        )
        return transport + reaction @ self.spatial.weights

    def evaluate(self, t: float, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Right-hand side ``L_h(u)`` and the moments it was evaluated at.

        Raises:
            RealizabilityError: If a cell mean is not realizable or cannot be
                closed at any regularization level.
        """
        u = np.asarray(u, dtype=float)
        self.check_realizable(u, t)
        self.diagnostics.n_evaluations += 1
        u_eff, psi = self.close(t, u)
        recon, stats = self.reconstruct(t, psi)
        self.diagnostics.record_limiter(stats)
        dpsi = self.kinetic_rhs(t, recon)
        du = (dpsi * self.angular.weights) @ self.angular.basis_at_nodes.T
        return u_eff, du

    def __call__(self, t: float, u: np.ndarray) -> np.ndarray:
        """``L_h(u)`` alone."""
        return self.evaluate(t, u)[1]

    def state(self, t: float, u: np.ndarray) -> SolverState:
        """Solver state at ``t`` with its limited reconstruction.

        The closure starts from the current warm start but neither replaces it
        nor enters the diagnostics.
        """
        if self.model == "pN":
            multipliers = self.multipliers.copy()
            psi = pn_ansatz(u, self.angular)
        else:
            result = self._solve(t, u)
            multipliers = result.alpha_bar
            psi = eval_ansatz(result.alpha_bar, self.angular, result.scale)
        recon, _ = self.reconstruct(t, psi)
        return SolverState(
            t=t,
            moments=np.array(u, dtype=float),
            multipliers=multipliers,
            mesh=self.mesh,
            angular=self.angular,
            reconstruction=recon,
        )


@dataclass(frozen=True)
class RunResult:
    """Outcome of :func:`run`.

    Attributes:
        state: Final state.
        config: Configuration of the run.
        dt: Step size actually used.
        n_steps: Number of main steps of size ``dt``.
        substeps: Startup substeps of a multistep integrator.
        wall_time: Elapsed seconds.
        diagnostics: Optimizer and limiter totals.
        snapshots: States saved every ``save_every`` steps.
    """

    state: SolverState
    config: RunConfig
    dt: float
    n_steps: int
    substeps: tuple[float, ...]
    wall_time: float
    diagnostics: SolverDiagnostics
    snapshots: tuple[SolverState, ...] = ()


def run(
    problem: Problem,
    cfg: RunConfig,
    *,
    scheme: KineticScheme | None = None,
    monitor: Callable[[float], None] | None = None,
) -> RunResult:
    """Advance a problem to its final time.

    Args:
        problem: Test case.
        cfg: Run configuration; ``t_final`` overrides the problem's.
        scheme: Prebuilt operator, otherwise built from ``cfg``.
        monitor: Receives the size of every Euler step.

    Returns:
        Final state, timing and diagnostics.

    Raises:
        RealizabilityError: If the cell means leave the realizable set.
    """
    started = time.perf_counter()
    scheme = scheme or KineticScheme.from_config(problem, cfg)
    t_final = problem.t_final if cfg.t_final is None else cfg.t_final
    u0 = problem.initial_moments(scheme.mesh, scheme.spatial, scheme.angular)
    tab = tableau(cfg.resolved_integrator())
    dt = compute_dt(scheme.sigma_t_bound(t_final), scheme.mesh, scheme.spatial, cfg.eps, tab.rho)
    n_steps = math.ceil(t_final / dt - 1e-12) if t_final > 0 else 0
    if n_steps:
        dt = t_final / n_steps
    logger.info(
        "Running %s with %s: J=%d, N=%d, k=%d, dt=%.4e, %d steps",
        problem.name,
        tab.name,
        scheme.mesh.n_cells,
        scheme.angular.n_moments,
        cfg.k,
        dt,
        n_steps,
    )
    snapshots: list[SolverState] = []

    def record(step: int, t: float, u: np.ndarray) -> None:
        logger.debug("step %d/%d t=%.6g", step, n_steps, t)
        if cfg.save_every and step % cfg.save_every == 0:
            snapshots.append(scheme.state(t, u))

    integrator = Integrator(
        tab, scheme, dt, q_init=cfg.resolved_startup_exponent(), monitor=monitor
    )
    u = integrator.run(u0, n_steps, callback=record)
    scheme.check_realizable(u, t_final)
    final = scheme.state(t_final, u)
    wall = time.perf_counter() - started
    logger.info(
        "Finished %s in %.2fs (%d evaluations, %d regularized closures)",
        problem.name,
        wall,
        scheme.diagnostics.n_evaluations,
        scheme.diagnostics.n_regularized,
    )
    return RunResult(
        state=final,
        config=cfg,
        dt=dt,
        n_steps=n_steps,
        substeps=tuple(integrator.substeps),
        wall_time=wall,
        diagnostics=scheme.diagnostics,
        snapshots=tuple(snapshots),
    )


def sample_solution(state: SolverState, points: np.ndarray) -> np.ndarray:
    """Moments of the in-cell reconstruction at arbitrary points.

    Args:
        state: State with a reconstruction.
        points: Abscissae inside the domain.

    Returns:
        Moments ``(len(points), N + 1)``.

    Raises:
        InvalidArgumentError: If a point is outside the domain or the state
            carries no reconstruction.
    """
    recon = state.reconstruction
    if recon is None:
        raise InvalidArgumentError("State has no reconstruction to sample")
    cells, xi = state.mesh.locate(points)
    rows = cells + 1
    k = recon.coeffs_right.shape[-1]
    powers = xi[:, None] ** np.arange(k)
    right = np.einsum("pna,pa->pn", recon.coeffs_right[rows], powers)
    left = np.einsum("pna,pa->pn", recon.coeffs_left[rows], powers)
    direction = recon.direction
    values = np.where(direction > 0, right, np.where(direction < 0, left, 0.5 * (right + left)))
    q = state.angular
    return (values * q.weights) @ q.basis_at_nodes.T


def sample_cells(state: SolverState, xi: np.ndarray) -> np.ndarray:
    """Moments of the reconstruction at reference points of every cell.

    Args:
        state: State with a reconstruction.
        xi: Reference abscissae in [-1/2, 1/2].

    Returns:
        Moments ``(J, len(xi), N + 1)``.
    """
    recon = state.reconstruction
    if recon is None:
        raise InvalidArgumentError("State has no reconstruction to sample")
    values = recon.evaluate(np.asarray(xi, dtype=float))[1:-1]
    q = state.angular
    return np.einsum("jap,a,ma->jpm", values, q.weights, q.basis_at_nodes)
