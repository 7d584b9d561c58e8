"""WENO reconstruction of ansatz values per angular node.

Each cell is mapped to the reference coordinate ``xi = (x - x_j) / dx`` in
[-1/2, 1/2]. Order ``k`` uses the ``k`` substencils of ``k`` cells that contain
cell ``j``; the nonlinear weights target one cell edge at a time, so every cell
carries two weighted polynomials: one aimed at ``x_{j+1/2}`` (used where
``mu > 0``) and one aimed at ``x_{j-1/2}`` (used where ``mu < 0``).
"""

from dataclasses import dataclass, replace
from functools import cache
from math import factorial

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import WenoConfig
from .errors import InvalidArgumentError
from .quadrature import SpatialQuadrature


def _powers(xi: np.ndarray | float, degree: int) -> np.ndarray:
    """Vandermonde rows ``xi**a`` for ``a = 0..degree``, shape ``(degree+1, n)``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return np.vander(xi, degree + 1, increasing=True).T


def _average_matrix(offsets: np.ndarray, k: int) -> np.ndarray:
    """Cell averages of ``xi**a`` over cells ``[o - 1/2, o + 1/2]``."""
    a = np.arange(k)
    hi = (offsets[:, None] + 0.5) ** (a + 1)
    lo = (offsets[:, None] - 0.5) ** (a + 1)
    return (hi - lo) / (a + 1)


def _smoothness_matrix(k: int) -> np.ndarray:
    """Jiang-Shu matrix ``S[a, b] = sum_l int D^l xi^a D^l xi^b``."""
    s = np.zeros((k, k))
    for level in range(1, k):
        for a in range(level, k):
            for b in range(level, k):
                ca = factorial(a) / factorial(a - level)
                cb = factorial(b) / factorial(b - level)
                p = a + b - 2 * level
                integral = (0.5 ** (p + 1) - (-0.5) ** (p + 1)) / (p + 1)
                s[a, b] += ca * cb * integral
    return s


@dataclass(frozen=True)
class WenoStencils:
    """Precomputed linear algebra of the order-``k`` reconstruction.

    Attributes:
        k: Reconstruction order.
        window_index: ``(k, k)`` positions of each substencil in the
            ``2k - 1`` window centered on the cell.
        reconstruct: ``(k, k, k)`` maps from substencil means to coefficients.
        smoothness: ``(k, k, k)`` quadratic forms on substencil means.
        gamma_right: Linear weights targeting ``xi = 1/2``.
        gamma_left: Linear weights targeting ``xi = -1/2``.
    """

    k: int
    window_index: np.ndarray
    reconstruct: np.ndarray
    smoothness: np.ndarray
    gamma_right: np.ndarray
    gamma_left: np.ndarray


def _linear_weights(k: int, edge: float, reconstruct: np.ndarray) -> np.ndarray:
    """Weights combining the substencil edge values into the big-stencil value."""
    width = 2 * k - 1
    big = np.linalg.inv(_average_matrix(np.arange(-(k - 1), k, dtype=float), width))
    target = _powers(edge, width - 1)[:, 0] @ big
    columns = np.zeros((width, k))
    for r in range(k):
        columns[k - 1 - r : 2 * k - 1 - r, r] = _powers(edge, k - 1)[:, 0] @ reconstruct[r]
    gamma, *_ = np.linalg.lstsq(columns, target, rcond=None)
    return gamma


@cache
def weno_stencils(k: int) -> WenoStencils:
    """Build (once per ``k``) the reconstruction data of order ``k``.

    Raises:
        InvalidArgumentError: If ``k`` is outside 1..7.
    """
    if not 1 <= k <= 7:
        raise InvalidArgumentError(f"Reconstruction order must be in 1..7, got {k}")
    smooth = _smoothness_matrix(k)
    window_index = np.empty((k, k), dtype=int)
    reconstruct = np.empty((k, k, k))
    smoothness = np.empty((k, k, k))
    for r in range(k):
        offsets = np.arange(-r, k - r, dtype=float)
        window_index[r] = np.arange(k) + (k - 1 - r)
        reconstruct[r] = np.linalg.inv(_average_matrix(offsets, k))
        smoothness[r] = reconstruct[r].T @ smooth @ reconstruct[r]
    stencils = WenoStencils(
        k=k,
        window_index=window_index,
        reconstruct=reconstruct,
        smoothness=smoothness,
        gamma_right=_linear_weights(k, 0.5, reconstruct),
        gamma_left=_linear_weights(k, -0.5, reconstruct),
    )
    for arr in (
        stencils.window_index,
        stencils.reconstruct,
        stencils.smoothness,
        stencils.gamma_right,
        stencils.gamma_left,
    ):
        arr.setflags(write=False)
    return stencils


def candidate_polynomials(
    means: np.ndarray, dx: float = 1.0, shift: int = 0
) -> np.ndarray:
    """Polynomial of degree ``k - 1`` matching ``k`` consecutive cell averages.

    Args:
        means: Averages over ``k`` consecutive cells of width ``dx``.
        dx: Cell width.
        shift: Position of the target cell ``j`` inside the stencil; the stencil
            covers cells ``j - shift .. j - shift + k - 1``.

    Returns:
        Ascending coefficients in powers of ``x - x_j``.
    """
    means = np.asarray(means, dtype=float)
    k = means.shape[-1]
    if not 0 <= shift < k:
        raise InvalidArgumentError(f"Shift must be in 0..{k - 1}, got {shift}")
    offsets = np.arange(-shift, k - shift, dtype=float)
    coefficients = means @ np.linalg.inv(_average_matrix(offsets, k)).T
    return coefficients / dx ** np.arange(k)


def nonlinear_weights(
    beta: np.ndarray, gamma: np.ndarray, cfg: WenoConfig
) -> np.ndarray:
    """Normalized ``gamma / (epsilon + beta)**p`` along the last axis."""
    alpha = gamma / (cfg.epsilon + beta) ** cfg.power_p
    return alpha / alpha.sum(axis=-1, keepdims=True)


def _weighted_coefficients(
    windows: np.ndarray, cfg: WenoConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Edge-targeted polynomials of every window.

    Returns:
        ``(coeffs_right, coeffs_left, weights_right, weights_left)``.
    """
    k = cfg.k
    if k == 1:
        coeffs = windows[..., :1]
        ones = np.ones_like(coeffs)
        return coeffs, coeffs, ones, ones
    st = weno_stencils(k)
    sub = windows[..., st.window_index]  # (..., k, k)
    coeffs = np.einsum("rab,...rb->...ra", st.reconstruct, sub)
    beta = np.einsum("...ra,rab,...rb->...r", sub, st.smoothness, sub)
    w_right = nonlinear_weights(beta, st.gamma_right, cfg)
    w_left = nonlinear_weights(beta, st.gamma_left, cfg)
    right = np.einsum("...r,...ra->...a", w_right, coeffs)
    left = np.einsum("...r,...ra->...a", w_left, coeffs)
    return right, left, w_right, w_left


def edge_weights(window: np.ndarray, cfg: WenoConfig) -> tuple[np.ndarray, np.ndarray]:
    """Nonlinear weights of the substencils for the right and left edge."""
    _, _, w_right, w_left = _weighted_coefficients(np.asarray(window, dtype=float), cfg)
    return w_right, w_left


def reconstruct_edges(
    window: np.ndarray, cfg: WenoConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Edge values of the cell at the center of a ``2k - 1`` window.

    Args:
        window: Cell means ``(..., 2k - 1)`` centered on cell ``j``.
        cfg: Reconstruction parameters.

    Returns:
        ``(p_minus_right, p_plus_left, coeffs_right, coeffs_left)``: the value
        at ``x_{j+1/2}`` from inside cell ``j``, the value at ``x_{j-1/2}`` from
        inside cell ``j`` and the two weighted polynomials in ``xi``.
    """
    window = np.asarray(window, dtype=float)
    if window.shape[-1] != 2 * cfg.k - 1:
        raise InvalidArgumentError(
            f"Order {cfg.k} needs a window of {2 * cfg.k - 1} means, "
            f"got {window.shape[-1]}"
        )
    right, left, _, _ = _weighted_coefficients(window, cfg)
    k = cfg.k
    p_right = right @ _powers(0.5, k - 1)[:, 0]
    p_left = left @ _powers(-0.5, k - 1)[:, 0]
    return p_right, p_left, right, left


def reconstruct_interior(
    coeffs_right: np.ndarray,
    coeffs_left: np.ndarray,
    nodes: np.ndarray,
    direction: np.ndarray | float,
) -> np.ndarray:
    """Values of the in-cell reconstruction at reference nodes.

    The right-targeted polynomial is used where ``direction > 0``, the
    left-targeted one where ``direction < 0`` and their average where it is 0.

    Args:
        coeffs_right: Coefficients ``(..., k)`` targeting ``xi = 1/2``.
        coeffs_left: Coefficients ``(..., k)`` targeting ``xi = -1/2``.
        nodes: Reference abscissae in [-1/2, 1/2].
        direction: Sign of ``mu``, broadcast against the leading axes.

    Returns:
        Values of shape ``(..., len(nodes))``.
    """
    k = coeffs_right.shape[-1]
    powers = _powers(nodes, k - 1)
    right = coeffs_right @ powers
    left = coeffs_left @ powers
    direction = np.asarray(direction, dtype=float)[..., None]
    return np.where(direction > 0, right, np.where(direction < 0, left, 0.5 * (right + left)))


@dataclass(frozen=True)
class DirichletBoundary:
    """Constant inflow kinetic values at both ends, one per angular node."""

    left: np.ndarray
    right: np.ndarray


@dataclass(frozen=True)
class PeriodicBoundary:
    """Wrap-around boundary."""


Boundary = DirichletBoundary | PeriodicBoundary


def fill_ghosts(means: np.ndarray, boundary: Boundary, k: int) -> np.ndarray:
    """Extend cell means ``(J, nQ)`` with ``k`` ghost cells on each side.

    Args:
        means: Physical cell means per angular node.
        boundary: Dirichlet values or periodic wrap-around.
        k: Number of ghost layers.

    Returns:
        Array of shape ``(J + 2k, nQ)``.
    """
    means = np.asarray(means, dtype=float)
    n_cells = means.shape[0]
    if isinstance(boundary, PeriodicBoundary):
        if k > n_cells:
            raise InvalidArgumentError(
                f"Periodic ghosts need at least {k} cells, got {n_cells}"
            )
        return np.concatenate([means[n_cells - k :], means, means[:k]], axis=0)
    left = np.broadcast_to(boundary.left, (k, *means.shape[1:]))
    right = np.broadcast_to(boundary.right, (k, *means.shape[1:]))
    return np.concatenate([left, means, right], axis=0)


@dataclass(frozen=True)
class CellReconstruction:
    """In-cell reconstruction per cell and angular node.

    Rows cover the physical cells plus one ghost cell on each side, so row
    ``i`` is cell ``i`` in the 1-based numbering with ghosts ``0`` and
    ``J + 1``.

    Attributes:
        means: Cell means ``(J + 2, nQ)``.
        coeffs_right: Polynomials targeting the right edge ``(J + 2, nQ, k)``.
        coeffs_left: Polynomials targeting the left edge ``(J + 2, nQ, k)``.
        edge_right_minus: ``psi^-_{j+1/2}``, the value at the right edge from
            inside the cell.
        edge_left_plus: ``psi^+_{j-1/2}``, the value at the left edge from
            inside the cell.
        interior: Values at the spatial nodes ``(J + 2, nQ, nqs)``.
        theta: Limiter scaling ``(J + 2, nQ)``, 1 where unlimited.
        direction: Sign of ``mu`` per angular node.
    """

    means: np.ndarray
    coeffs_right: np.ndarray
    coeffs_left: np.ndarray
    edge_right_minus: np.ndarray
    edge_left_plus: np.ndarray
    interior: np.ndarray
    direction: np.ndarray
    theta: np.ndarray

    @property
    def edge_left_minus(self) -> np.ndarray:
        """``psi^-_{j-1/2}`` of the physical cells, taken from the left neighbour."""
        return self.edge_right_minus[:-2]

    @property
    def edge_right_plus(self) -> np.ndarray:
        """``psi^+_{j+1/2}`` of the physical cells, taken from the right neighbour."""
        return self.edge_left_plus[2:]

    def scaled(self, theta: np.ndarray) -> "CellReconstruction":
        """Contract every polynomial toward its mean by ``theta``."""
        t = theta[..., None]
        mean = self.means[..., None]
        coeffs_right = t * self.coeffs_right
        coeffs_left = t * self.coeffs_left
        coeffs_right[..., 0] += (1.0 - theta) * self.means
        coeffs_left[..., 0] += (1.0 - theta) * self.means
        return replace(
            self,
            coeffs_right=coeffs_right,
            coeffs_left=coeffs_left,
            edge_right_minus=(1.0 - theta) * self.means + theta * self.edge_right_minus,
            edge_left_plus=(1.0 - theta) * self.means + theta * self.edge_left_plus,
            interior=(1.0 - t) * mean + t * self.interior,
            theta=self.theta * theta,
        )

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        """Reconstruction at reference points ``xi`` of every cell."""
        return reconstruct_interior(
            self.coeffs_right, self.coeffs_left, np.asarray(xi, dtype=float), self.direction
        )


def reconstruct_cells(
    means_ext: np.ndarray,
    cfg: WenoConfig,
    spatial: SpatialQuadrature,
    direction: np.ndarray,
) -> CellReconstruction:
    """Reconstruct the physical cells and the two adjacent ghost cells.

    Args:
        means_ext: Ghost-extended means ``(J + 2k, nQ)`` from :func:`fill_ghosts`.
        cfg: Reconstruction parameters.
        spatial: Spatial quadrature whose nodes receive interior values.
        direction: Sign of ``mu`` per angular node.

    Returns:
        The reconstruction of ``J + 2`` cells.
    """
    k = cfg.k
    windows = sliding_window_view(means_ext, 2 * k - 1, axis=0)
    right, left, _, _ = _weighted_coefficients(windows, cfg)
    means = means_ext[k - 1 : means_ext.shape[0] - k + 1]
    return CellReconstruction(
        means=means,
        coeffs_right=right,
        coeffs_left=left,
        edge_right_minus=right @ _powers(0.5, k - 1)[:, 0],
        edge_left_plus=left @ _powers(-0.5, k - 1)[:, 0],
        interior=reconstruct_interior(right, left, spatial.nodes, direction),
        direction=np.asarray(direction, dtype=float),
        theta=np.ones(means.shape),
    )
