"""Benchmark problems, reference solutions, error norms and convergence studies."""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .closure import CollisionKernel
from .config import RunConfig
from .errors import InvalidArgumentError, UndefinedOrderError, UnsupportedProblemError
from .moments import moments_of_density
from .quadrature import AngularQuadrature, SpatialQuadrature, build_lobatto, integrate
from .solver import MaterialField, Mesh, RunResult, SolverState, run, sample_cells
from .weno import DirichletBoundary, PeriodicBoundary

logger = logging.getLogger(__name__)

# nodes per cell of the error quadrature
_ERROR_NODES = 100


def _cell_means(
    density: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mesh: Mesh,
    spatial: SpatialQuadrature,
    q: AngularQuadrature,
) -> np.ndarray:
    """Cell means of the moments of ``density(x, mu)`` by the spatial rule."""
    x = mesh.nodes(spatial)
    values = density(x[:, :, None], q.mu[None, None, :])  # (J, nqs, nQ)
    pointwise = (values * q.weights) @ q.basis_at_nodes.T
    return np.einsum("jim,i->jm", pointwise, spatial.weights)


@dataclass(frozen=True)
class ManufacturedSample:
    """Manufactured solution at one point.

    Attributes:
        phi: Density at the angular nodes.
        moments: ``<m phi>`` by angular quadrature.
        source: Source ``S`` at the angular nodes.
        sigma_a: Absorption.
    """

    phi: np.ndarray
    moments: np.ndarray
    source: np.ndarray
    sigma_a: float


@dataclass(frozen=True)
class ManufacturedProblem:
    """Smooth periodic solution of the form of the entropy ansatz.

    ``phi = exp(alpha0 + alpha1 mu)`` with ``alpha1 = K + sin(x - t)`` and
    ``alpha0 = -alpha1 - a``; the source makes it an exact solution for
    ``sigma_a = 4 (1 - cos(x - t))`` and ``sigma_s = 0``. The
    ``conservation`` variant keeps the initial data but uses ``sigma_a = 0``,
    ``S = 0`` and ``sigma_s = 1``.
    """

    peaking: float = 4.0
    conservation: bool = False
    t_final: float = math.pi / 5
    name: str = "manufactured"
    domain: tuple[float, float] = (-math.pi, math.pi)

    def __post_init__(self) -> None:
        """Validate the peaking parameter."""
        if not self.peaking > 1.0:
            raise InvalidArgumentError("Peaking parameter K must exceed 1")

    @property
    def offset(self) -> float:
        """``a`` such that the maximum of ``<phi>`` over ``(t, x)`` is one."""
        k1 = self.peaking - 1.0
        return -k1 - math.log(k1 / (2.0 * math.sinh(k1)))

    def multipliers(
        self, t: float | np.ndarray, x: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """``(alpha0, alpha1)`` at ``(t, x)``."""
        alpha1 = self.peaking + np.sin(x - t)
        return -alpha1 - self.offset, alpha1

    def density(self, t: float | np.ndarray, x: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """``phi(t, x, mu)``."""
        alpha0, alpha1 = self.multipliers(t, x)
        return np.exp(alpha0 + alpha1 * mu)

    def sigma_a(self, t: float | np.ndarray, x: np.ndarray) -> np.ndarray:
        """Absorption ``4 (1 - cos(x - t))``."""
        return 4.0 * (1.0 - np.cos(x - t))

    def source(self, t: float | np.ndarray, x: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """``d_t phi + mu d_x phi + sigma_a phi = phi (cos (1 - mu)^2 + sigma_a)``."""
        c = np.cos(x - t)
        return self.density(t, x, mu) * (c * (1.0 - mu) ** 2 + 4.0 * (1.0 - c))

    def exact_w0(self, t: float, x: np.ndarray) -> np.ndarray:
        """``<phi>`` integrated exactly in ``mu``."""
        alpha0, alpha1 = self.multipliers(t, np.asarray(x, dtype=float))
        return np.exp(alpha0) * 2.0 * np.sinh(alpha1) / alpha1

    def coefficient_order(self, k: int) -> int:
        """Smooth coefficients are resolved like the solution."""
        return 1 if self.conservation else k

    def kernel(self, q: AngularQuadrature) -> CollisionKernel:
        """Isotropic scattering."""
        return CollisionKernel.isotropic(q)

    def boundary(self, t: float, q: AngularQuadrature) -> PeriodicBoundary:
        """Periodic."""
        return PeriodicBoundary()

    def materials(
        self, t: float, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> MaterialField:
        """Coefficients at time ``t``."""
        if self.conservation:
            return MaterialField.from_functions(
                mesh,
                spatial,
                q,
                np.zeros_like,
                np.ones_like,
                lambda x, mu: np.zeros(np.broadcast_shapes(x.shape, mu.shape)),
                piecewise_constant=True,
            )
        return MaterialField.from_functions(
            mesh,
            spatial,
            q,
            lambda x: self.sigma_a(t, x),
            np.zeros_like,
            lambda x, mu: self.source(t, x, mu),
        )

    def initial_moments(
        self, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> np.ndarray:
        """Cell means of ``<m phi(0, x, .)>``."""
        return _cell_means(lambda x, mu: self.density(0.0, x, mu), mesh, spatial, q)


def manufactured_exact(
    t: float, x: float, q: AngularQuadrature, peaking: float = 4.0
) -> ManufacturedSample:
    """Manufactured density, moments, source and absorption at ``(t, x)``."""
    problem = ManufacturedProblem(peaking=peaking)
    phi = problem.density(t, x, q.mu)
    return ManufacturedSample(
        phi=phi,
        moments=moments_of_density(q, phi),
        source=problem.source(t, x, q.mu),
        sigma_a=float(problem.sigma_a(t, x)),
    )


def delta_initialize(
    mesh: Mesh, q: AngularQuadrature, psi_floor: float
) -> np.ndarray:
    """Kinetic cell means of a unit-mass isotropic pulse at the domain center.

    The pulse is split evenly into the two cells that share the center edge,
    on top of a floor everywhere.

    Returns:
        Cell means per angular node ``(J, nQ)``.

    Raises:
        InvalidArgumentError: If the cell count is odd.

    Example:
        >>> from kinetic_moment_closure.quadrature import build_angular
        >>> psi = delta_initialize(Mesh(-1.2, 1.2, 4), build_angular(8, 1), 0.0)
        >>> float(psi[1, 0] * 2 * 0.6)
        0.5
    """
    n = mesh.n_cells
    if n % 2 != 0:
        raise InvalidArgumentError(f"The pulse needs an even cell count, got {n}")
    psi = np.full((n, q.n_total), float(psi_floor))
    # isotropic density with zeroth moment 1 / (2 dx) in each of the two cells
    psi[n // 2 - 1 : n // 2 + 1] += 1.0 / (4.0 * mesh.dx)
    return psi


@dataclass(frozen=True)
class PlaneSourceProblem:
    """Unit isotropic pulse in a scattering near-vacuum."""

    psi_floor: float = 0.5e-8
    t_final: float = 1.0
    name: str = "plane_source"
    domain: tuple[float, float] = (-1.2, 1.2)

    def coefficient_order(self, k: int) -> int:
        """Constant coefficients."""
        return 1

    def kernel(self, q: AngularQuadrature) -> CollisionKernel:
        """Isotropic scattering."""
        return CollisionKernel.isotropic(q)

    def boundary(self, t: float, q: AngularQuadrature) -> DirichletBoundary:
        """Floor values on both sides."""
        floor = np.full(q.n_total, self.psi_floor)
        return DirichletBoundary(left=floor, right=floor)

    def materials(
        self, t: float, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> MaterialField:
        """``sigma_s = 1``, ``sigma_a = 0``, no source."""
        return MaterialField.from_functions(
            mesh,
            spatial,
            q,
            np.zeros_like,
            np.ones_like,
            lambda x, mu: np.zeros(np.broadcast_shapes(x.shape, mu.shape)),
            piecewise_constant=True,
        )

    def initial_moments(
        self, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> np.ndarray:
        """Moments of :func:`delta_initialize`."""
        return moments_of_density(q, delta_initialize(mesh, q, self.psi_floor))

    def mass(self, moments: np.ndarray, mesh: Mesh) -> float:
        """Total zeroth moment minus the floor background."""
        floor = 2.0 * self.psi_floor * (mesh.x_right - mesh.x_left)
        return float(moments[:, 0].sum() * mesh.dx - floor)


@dataclass(frozen=True)
class SourceBeamProblem:
    """Collimated beam entering discontinuous absorbing and scattering media."""

    psi_floor: float = 0.5e-10
    gamma: float = 1e5
    t_final: float = 2.5
    name: str = "source_beam"
    domain: tuple[float, float] = (0.0, 3.0)

    @staticmethod
    def sigma_a(x: np.ndarray) -> np.ndarray:
        """1 up to ``x = 2``, then 0."""
        return np.where(x <= 2.0, 1.0, 0.0)

    @staticmethod
    def sigma_s(x: np.ndarray) -> np.ndarray:
        """0 up to ``x = 1``, 2 up to ``x = 2``, then 10."""
        return np.where(x <= 1.0, 0.0, np.where(x <= 2.0, 2.0, 10.0))

    @staticmethod
    def source(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """1 on ``[1, 1.5]``, else 0, in every direction."""
        inside = (x >= 1.0) & (x <= 1.5)
        return np.broadcast_to(np.where(inside, 1.0, 0.0), np.broadcast_shapes(x.shape, mu.shape))

    def normalization(self, q: AngularQuadrature) -> float:
        """``beta`` with ``beta <exp(-gamma (mu - 1)^2)> = 1`` under ``q``."""
        return 1.0 / float(integrate(q, np.exp(-self.gamma * (q.mu - 1.0) ** 2)))

    def inflow(self, q: AngularQuadrature) -> np.ndarray:
        """Left boundary density at the angular nodes."""
        return self.normalization(q) * np.exp(-self.gamma * (q.mu - 1.0) ** 2)

    def coefficient_order(self, k: int) -> int:
        """Piecewise constant coefficients."""
        return 1

    def kernel(self, q: AngularQuadrature) -> CollisionKernel:
        """Isotropic scattering."""
        return CollisionKernel.isotropic(q)

    def boundary(self, t: float, q: AngularQuadrature) -> DirichletBoundary:
        """Beam on the left, floor on the right."""
        return DirichletBoundary(
            left=self.inflow(q), right=np.full(q.n_total, self.psi_floor)
        )

    def materials(
        self, t: float, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> MaterialField:
        """Piecewise constant coefficients, one value per cell."""
        return MaterialField.from_functions(
            mesh,
            spatial,
            q,
            self.sigma_a,
            self.sigma_s,
            self.source,
            piecewise_constant=True,
        )

    def initial_moments(
        self, mesh: Mesh, spatial: SpatialQuadrature, q: AngularQuadrature
    ) -> np.ndarray:
        """Moments of the floor density."""
        psi = np.full((mesh.n_cells, q.n_total), self.psi_floor)
        return moments_of_density(q, psi)


Problem = ManufacturedProblem | PlaneSourceProblem | SourceBeamProblem


def make_problem(cfg: RunConfig, *, conservation: bool = False) -> Problem:
    """Problem selected by a run configuration."""
    if cfg.problem == "manufactured":
        return ManufacturedProblem(peaking=cfg.peaking, conservation=conservation)
    if conservation:
        raise UnsupportedProblemError("Only the manufactured problem has a conservation variant")
    if cfg.problem == "plane_source":
        return PlaneSourceProblem()
    return SourceBeamProblem()


def error_norms(
    state: SolverState, exact_w0: Callable[[np.ndarray], np.ndarray]
) -> tuple[float, float]:
    """``L1`` and maximum error of the zeroth moment.

    Both use a 100-point Lobatto rule in every cell and the reconstruction of
    the numerical solution at its nodes.

    Args:
        state: Numerical solution with a reconstruction.
        exact_w0: Exact zeroth moment as a function of ``x``.

    Returns:
        ``(E1, Einf)``.
    """
    rule = build_lobatto(_ERROR_NODES, -0.5, 0.5)
    mesh = state.mesh
    x = mesh.centers[:, None] + mesh.dx * rule.nodes[None, :]
    numeric = sample_cells(state, rule.nodes)[..., 0]
    diff = np.abs(np.asarray(exact_w0(x), dtype=float) - numeric)
    return float(mesh.dx * np.sum(diff @ rule.weights)), float(diff.max())


def observed_order(
    e_coarse: float, e_fine: float, dx_coarse: float, dx_fine: float
) -> float:
    """Observed convergence order between two resolutions.

    Raises:
        UndefinedOrderError: If an error or width is not positive, or the
            widths coincide.

    Example:
        >>> observed_order(1e-2, 2.5e-3, 0.1, 0.05)
        2.0
    """
    if min(e_coarse, e_fine) <= 0.0 or min(dx_coarse, dx_fine) <= 0.0:
        raise UndefinedOrderError("Errors and cell widths must be positive")
    if dx_coarse == dx_fine:
        raise UndefinedOrderError("Cell widths must differ")
    return math.log(e_coarse / e_fine) / math.log(dx_coarse / dx_fine)


@dataclass(frozen=True)
class ConvergenceRow:
    """One grid of a convergence study; orders are ``None`` on the first row."""

    n_cells: int
    e1: float
    order_e1: float | None
    einf: float
    order_einf: float | None
    wall_time: float
    n_evaluations: int = 0


@dataclass
class ConvergenceStudy:
    """Rows of a convergence study and the runs behind them."""

    rows: list[ConvergenceRow] = field(default_factory=list)
    results: list[RunResult] = field(default_factory=list)


def convergence_study(
    cfg: RunConfig, grids: Sequence[int] | None = None
) -> ConvergenceStudy:
    """Run the manufactured problem on several grids.

    Raises:
        UnsupportedProblemError: If the problem has no exact solution.
    """
    if cfg.problem != "manufactured":
        raise UnsupportedProblemError("Convergence studies need the manufactured problem")
    problem = ManufacturedProblem(peaking=cfg.peaking)
    t_final = problem.t_final if cfg.t_final is None else cfg.t_final
    study = ConvergenceStudy()
    previous: tuple[float, float, float] | None = None
    for n_cells in grids or cfg.grids:
        result = run(problem, cfg.model_copy(update={"n_cells": n_cells}))
        e1, einf = error_norms(result.state, lambda x: problem.exact_w0(t_final, x))
        dx = result.state.mesh.dx
        orders: tuple[float | None, float | None] = (None, None)
        if previous is not None:
            orders = (
                observed_order(previous[0], e1, previous[2], dx),
                observed_order(previous[1], einf, previous[2], dx),
            )
        study.rows.append(
            ConvergenceRow(
                n_cells=n_cells,
                e1=e1,
                order_e1=orders[0],
                einf=einf,
                order_einf=orders[1],
                wall_time=result.wall_time,
                n_evaluations=result.diagnostics.n_evaluations,
            )
        )
        study.results.append(result)
        logger.info("J=%d: E1=%.3e Einf=%.3e", n_cells, e1, einf)
        previous = (e1, einf, dx)
    return study


def efficiency_rows(study: ConvergenceStudy) -> list[dict[str, float]]:
    """Error against wall time, one record per grid."""
    return [
        {
            "J": row.n_cells,
            "E1": row.e1,
            "Einf": row.einf,
            "wall_time": row.wall_time,
            "evaluations": row.n_evaluations,
        }
        for row in study.rows
    ]


def pn_reference(
    problem: Problem,
    n_pn: int,
    n_cells: int,
    *,
    t_final: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """First-order ``P_N`` solution used as a reference profile.

    Args:
        problem: Test case.
        n_pn: Odd moment order of the polynomial closure.
        n_cells: Cell count.
        t_final: Optional override of the final time.

    Returns:
        ``(x, w0)`` at the cell centers.

    Raises:
        InvalidArgumentError: If ``n_pn`` is even.
    """
    if n_pn % 2 == 0:
        raise InvalidArgumentError(f"P_N references need an odd order, got {n_pn}")
    cfg = RunConfig(
        problem=problem.name,  # type: ignore[arg-type]
        model="pN",
        N=n_pn,
        k=1,
        J=n_cells,
        n_q=2 * (n_pn + 2),
        t_final=t_final,
        limiter="off",
    )
    # P_0 = 1, so the zeroth Legendre moment is the density
    state = run(problem, cfg).state
    return state.mesh.centers, state.moments[:, 0].copy()
