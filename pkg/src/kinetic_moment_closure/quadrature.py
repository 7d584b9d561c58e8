"""Gauss-Lobatto quadrature in angle and on the reference cell.

The angular variable is integrated with two half-range Lobatto rules, one on
[-1, 0] and one on [0, 1], so that half-range integrals are exact sub-sums of
the full-range integral. The spatial reference cell [-1/2, 1/2] carries a single
Lobatto rule whose endpoints coincide with the cell edges.
"""

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import InvalidArgumentError

Basis = Literal["monomial", "legendre"]

_NEWTON_TOL = 1e-15
_NEWTON_MAX_ITER = 100


@dataclass(frozen=True)
class LobattoRule:
    """Gauss-Lobatto rule on a closed interval.

    Attributes:
        nodes: Ascending abscissae, first and last equal to the interval ends.
        weights: Positive weights summing to the interval length.
        interval: The ``(lo, hi)`` interval the rule integrates over.
    """

    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    def __len__(self) -> int:
        """Number of nodes."""
        return int(self.nodes.shape[0])

    @property
    def length(self) -> float:
        """Length of the interval."""
        return self.interval[1] - self.interval[0]


@dataclass(frozen=True)
class AngularQuadrature:
    """Paired half-range Lobatto rules on [-1, 0] and [0, 1].

    Node arrays are the concatenation negative half first, so ``mu`` ascends
    and contains ``0`` twice (the last node of the negative half and the first
    node of the positive half), each with the weight of its own rule.

    Attributes:
        negative_half: Rule on [-1, 0].
        positive_half: Rule on [0, 1].
        n_moments: Moment order ``N``.
        basis: Name of the angular basis.
        basis_at_nodes: Array ``(N + 1, nQ)`` with basis functions at the nodes.
    """

    negative_half: LobattoRule
    positive_half: LobattoRule
    n_moments: int
    basis: Basis = "monomial"
    basis_at_nodes: np.ndarray = field(init=False, repr=False)
    mu: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Assemble the full-range nodes, weights and basis matrix."""
        mu = np.concatenate([self.negative_half.nodes, self.positive_half.nodes])
        weights = np.concatenate(
            [self.negative_half.weights, self.positive_half.weights]
        )
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(
            self, "basis_at_nodes", basis_matrix(mu, self.n_moments, self.basis)
        )
        for arr in (self.mu, self.weights, self.basis_at_nodes):
            arr.setflags(write=False)

    @property
    def n_total(self) -> int:
        """Total node count ``nQ``."""
        return int(self.mu.shape[0])

    @property
    def n_half(self) -> int:
        """Node count of each half-range rule."""
        return len(self.negative_half)

    @property
    def negative_slice(self) -> slice:
        """Index range of the negative half in the full-range arrays."""
        return slice(0, self.n_half)

    @property
    def positive_slice(self) -> slice:
        """Index range of the positive half in the full-range arrays."""
        return slice(self.n_half, self.n_total)

    @property
    def direction(self) -> np.ndarray:
        """Sign of ``mu`` per node with ``0`` for the two ``mu = 0`` nodes."""
        return np.sign(self.mu)

    @property
    def last_weight(self) -> float:
        """Weight of the ``mu = 1`` node."""
        return float(self.positive_half.weights[-1])


@dataclass(frozen=True)
class SpatialQuadrature:
    """Lobatto rule on the reference cell [-1/2, 1/2].

    Attributes:
        rule: The underlying Lobatto rule.
    """

    rule: LobattoRule

    @property
    def n_nodes(self) -> int:
        """Number of spatial nodes ``nqs``."""
        return len(self.rule)

    @property
    def nodes(self) -> np.ndarray:
        """Reference abscissae in [-1/2, 1/2]."""
        return self.rule.nodes

    @property
    def weights(self) -> np.ndarray:
        """Weights summing to one."""
        return self.rule.weights

    @property
    def end_weight(self) -> float:
        """Weight of the endpoint nodes."""
        return float(self.rule.weights[-1])


def _legendre_pair(n: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``P_n`` and ``P_{n-1}`` by the three-term recurrence."""
    p_prev = np.ones_like(t)
    p = t.copy()
    for j in range(1, n):
        p_prev, p = p, ((2 * j + 1) * t * p - j * p_prev) / (j + 1)
    return p, p_prev


def _reference_lobatto(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Lobatto nodes and weights on [-1, 1] with ``n`` nodes."""
    if n == 2:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    degree = n - 1
    # Chebyshev-Gauss-Lobatto points as the first guess
    t = -np.cos(np.pi * np.arange(n) / degree)
    for _ in range(_NEWTON_MAX_ITER):
        p, p_prev = _legendre_pair(degree, t)
        step = (t * p - p_prev) / (n * p)
        t = t - step
        if np.max(np.abs(step)) < _NEWTON_TOL:
            break
    p, _ = _legendre_pair(degree, t)
    weights = 2.0 / (degree * n * p**2)
    # enforce exact endpoints and mirror symmetry
    t = 0.5 * (t - t[::-1])
    weights = 0.5 * (weights + weights[::-1])
    t[0], t[-1] = -1.0, 1.0
    if n % 2 == 1:
        t[n // 2] = 0.0
    return t, weights


def build_lobatto(n: int, lo: float, hi: float) -> LobattoRule:
    """Build an ``n``-point Gauss-Lobatto rule on ``[lo, hi]``.

    The nodes are the roots of ``(1 - t**2) P'_{n-1}(t)`` found by Newton
    iteration, mapped affinely from [-1, 1]. The rule is exact for polynomials of
    degree ``2n - 3``.

    Args:
        n: Number of nodes, at least 2.
        lo: Left end of the interval.
        hi: Right end of the interval.

    Returns:
        The quadrature rule.

    Raises:
        InvalidArgumentError: If ``n < 2`` or ``lo >= hi``.

    Example:
        >>> rule = build_lobatto(3, -0.5, 0.5)
        >>> rule.weights.tolist()
        [0.16666666666666666, 0.6666666666666666, 0.16666666666666666]
    """
    if n < 2:
        raise InvalidArgumentError(f"A Lobatto rule needs at least 2 nodes, got {n}")
    if not lo < hi:
        raise InvalidArgumentError(f"Empty interval [{lo!r}, {hi!r}]")
    t, w = _reference_lobatto(n)
    half = 0.5 * (hi - lo)
    nodes = lo + half * (t + 1.0)
    nodes[0], nodes[-1] = lo, hi
    if lo == -hi and n % 2 == 1:
        nodes[n // 2] = 0.0
    weights = half * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return LobattoRule(nodes=nodes, weights=weights, interval=(float(lo), float(hi)))


def basis_matrix(mu: np.ndarray, n_moments: int, basis: Basis = "monomial") -> np.ndarray:
    """Evaluate the angular basis at ``mu``.

    Args:
        mu: Direction cosines.
        n_moments: Highest basis index ``N``.
        basis: ``"monomial"`` for ``mu**i`` or ``"legendre"`` for ``P_i(mu)``.

    Returns:
        Array of shape ``(N + 1, len(mu))``.
    """
    mu = np.asarray(mu, dtype=float)
    if basis == "monomial":
        return np.vander(mu, n_moments + 1, increasing=True).T.copy()
    if basis == "legendre":
        return npleg.legvander(mu, n_moments).T.copy()
    raise InvalidArgumentError(f"Unknown angular basis {basis!r}")


def build_angular(
    n_q: int, n_moments: int, basis: Basis = "monomial"
) -> AngularQuadrature:
    """Build the paired half-range angular quadrature.

    Args:
        n_q: Total node count, even and at least 4.
        n_moments: Moment order ``N``.
        basis: Angular basis evaluated at the nodes.

    Returns:
        The angular quadrature with ``n_q / 2`` nodes per half.

    Raises:
        InvalidArgumentError: If ``n_q`` is odd or smaller than 4.
    """
    if n_q % 2 != 0:
        raise InvalidArgumentError(f"Angular node count must be even, got {n_q}")
    if n_q < 4:
        raise InvalidArgumentError(f"Angular node count must be at least 4, got {n_q}")
    if n_moments < 1:
        raise InvalidArgumentError(f"Moment order must be at least 1, got {n_moments}")
    half = n_q // 2
    return AngularQuadrature(
        negative_half=build_lobatto(half, -1.0, 0.0),
        positive_half=build_lobatto(half, 0.0, 1.0),
        n_moments=n_moments,
        basis=basis,
    )


def spatial_node_count(k: int, k_s: int) -> int:
    """Smallest spatial Lobatto node count integrating the cell terms exactly.

    Args:
        k: Reconstruction order.
        k_s: Polynomial degree bound plus one of the material coefficients.

    Returns:
        ``ceil((k + k_s + 1) / 2)``, never less than 2.
    """
    return max(2, math.ceil((k + k_s + 1) / 2))


def build_spatial(k: int, k_s: int) -> SpatialQuadrature:
    """Build the reference-cell rule for reconstruction order ``k``."""
    return SpatialQuadrature(rule=build_lobatto(spatial_node_count(k, k_s), -0.5, 0.5))


def _weighted_sum(weights: np.ndarray, values: np.ndarray) -> float | np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[-1:] != weights.shape:
        raise InvalidArgumentError(
            f"Expected {weights.shape[0]} node values, got shape {values.shape}"
        )
    result = values @ weights
    return float(result) if np.ndim(result) == 0 else result


def integrate(
    quadrature: LobattoRule | AngularQuadrature | SpatialQuadrature,
    values: np.ndarray,
) -> float | np.ndarray:
    """Integrate node values along the last axis.

    Args:
        quadrature: Any rule of this module.
        values: Node values, the last axis matching the node count.

    Returns:
        A float for one-dimensional input, otherwise an array.

    Raises:
        InvalidArgumentError: On a node count mismatch.
    """
    return _weighted_sum(quadrature.weights, values)


def integrate_pos(q: AngularQuadrature, values: np.ndarray) -> float | np.ndarray:
    """Integrate over ``mu`` in [0, 1] only."""
    weights = np.where(np.arange(q.n_total) >= q.n_half, q.weights, 0.0)
    return _weighted_sum(weights, values)


def integrate_neg(q: AngularQuadrature, values: np.ndarray) -> float | np.ndarray:
    """Integrate over ``mu`` in [-1, 0] only."""
    weights = np.where(np.arange(q.n_total) < q.n_half, q.weights, 0.0)
    return _weighted_sum(weights, values)
