"""Closure-level quantities of the entropy ansatz and of the linear P_N ansatz."""

from dataclasses import dataclass
from functools import cache

import numpy as np
import scipy.linalg

from .entropy_optimizer import EXP_LIMIT
from .errors import AnsatzOverflowError, InvalidArgumentError
from .quadrature import AngularQuadrature, Basis


def eval_ansatz(
    alpha: np.ndarray, q: AngularQuadrature, scale: float | np.ndarray = 1.0
) -> np.ndarray:
    """Evaluate ``scale * exp(m^T alpha)`` at the angular nodes.

    Args:
        alpha: Multipliers, shape ``(..., N + 1)``.
        q: Angular quadrature.
        scale: Optional factor broadcast over the leading axes.

    Returns:
        Positive values with the last axis over the nodes.

    Raises:
        AnsatzOverflowError: If an exponent exceeds the overflow guard.
    """
    z = np.asarray(alpha, dtype=float) @ q.basis_at_nodes
    if np.any(z > EXP_LIMIT):
        raise AnsatzOverflowError("Ansatz exponent exceeds the overflow guard")
    return np.asarray(scale, dtype=float)[..., None] * np.exp(z)


def _check_nodes(psi: np.ndarray, q: AngularQuadrature) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != q.n_total:
        raise InvalidArgumentError(
            f"Expected {q.n_total} node values, got shape {psi.shape}"
        )
    return psi


def flux_moments(psi: np.ndarray, q: AngularQuadrature) -> np.ndarray:
    """Moments ``<mu m psi>`` of node values."""
    psi = _check_nodes(psi, q)
    return (psi * (q.weights * q.mu)) @ q.basis_at_nodes.T


@dataclass(frozen=True)
class CollisionKernel:
    """Scattering kernel at angular node pairs.

    ``matrix[a, b]`` is ``T(mu_a, mu_b)``, the rate of scattering from direction
    ``mu_b`` into ``mu_a``. Columns are normalized so that
    ``sum_a w_a T[a, b] = 1`` for every ``b``.

    Attributes:
        matrix: Normalized kernel values.
        gain: ``matrix * w`` so that the gain term is ``gain @ psi``.
    """

    matrix: np.ndarray
    gain: np.ndarray

    @classmethod
    def from_values(cls, q: AngularQuadrature, values: np.ndarray) -> "CollisionKernel":
        """Renormalize strictly positive kernel values at node pairs.

        Raises:
            InvalidArgumentError: If the values are not strictly positive.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != (q.n_total, q.n_total):
            raise InvalidArgumentError(
                f"Kernel must have shape {(q.n_total, q.n_total)}, got {values.shape}"
            )
        if not np.all(values > 0.0):
            raise InvalidArgumentError("Collision kernel must be strictly positive")
        column_mass = q.weights @ values
        matrix = values / column_mass[None, :]
        gain = matrix * q.weights[None, :]
        matrix.setflags(write=False)
        gain.setflags(write=False)
        return cls(matrix=matrix, gain=gain)

    @classmethod
    def from_function(cls, q: AngularQuadrature, kernel) -> "CollisionKernel":
        """Sample ``kernel(mu_out, mu_in)`` on the node grid and renormalize."""
        mu_out, mu_in = np.meshgrid(q.mu, q.mu, indexing="ij")
        return cls.from_values(q, kernel(mu_out, mu_in))

    @classmethod
    def isotropic(cls, q: AngularQuadrature) -> "CollisionKernel":
        """The isotropic kernel ``T = 1/2``."""
        return cls.from_values(q, np.full((q.n_total, q.n_total), 0.5))


def collision_ansatz_part(
    psi: np.ndarray, kernel: CollisionKernel, q: AngularQuadrature
) -> np.ndarray:
    """Gain term ``psi_C(mu_a) = sum_b w_b T(mu_a, mu_b) psi_b``.

    Nonnegative whenever ``psi`` is. Works along the last axis.
    """
    psi = _check_nodes(psi, q)
    return psi @ kernel.gain.T


def collision_moments(
    psi: np.ndarray, kernel: CollisionKernel, q: AngularQuadrature
) -> np.ndarray:
    """Moments ``<m C(psi)>`` of the collision operator ``C(psi) = psi_C - psi``."""
    psi = _check_nodes(psi, q)
    gain = collision_ansatz_part(psi, kernel, q)
    return ((gain - psi) * q.weights) @ q.basis_at_nodes.T


@cache
def _exact_gram(n_moments: int, basis: Basis) -> np.ndarray:
    """``<m m^T>`` over [-1, 1] in closed form."""
    i = np.arange(n_moments + 1)
    if basis == "legendre":
        return np.diag(2.0 / (2 * i + 1))
    p = np.add.outer(i, i)
    return np.where(p % 2 == 0, 2.0 / (p + 1), 0.0)


@cache
def pn_flux_matrix(n_moments: int, basis: Basis = "monomial") -> np.ndarray:
    """Matrix ``A`` with ``pn_closure_flux(u) = A u``.

    For the Legendre basis the three-term recurrence gives
    ``(A u)_i = (i u_{i-1} + (i + 1) u_{i+1}) / (2 i + 1)``. For monomials
    ``A = <mu m m^T> <m m^T>^{-1}``.
    """
    size = n_moments + 1
    if basis == "legendre":
        matrix = np.zeros((size, size))
        for i in range(size):
            if i >= 1:
                matrix[i, i - 1] = i / (2 * i + 1)
            if i + 1 < size:
                matrix[i, i + 1] = (i + 1) / (2 * i + 1)
        return matrix
    i = np.arange(size)
    p = np.add.outer(i, i) + 1
    first = np.where(p % 2 == 0, 2.0 / (p + 1), 0.0)
    gram = _exact_gram(n_moments, basis)
    return scipy.linalg.solve(gram, first.T, assume_a="pos").T


def pn_closure_flux(u: np.ndarray, basis: Basis = "monomial") -> np.ndarray:
    """Flux of the polynomial ansatz whose moments are ``u``.

    Args:
        u: Moments, shape ``(..., N + 1)``.
        basis: Basis the moments are taken against.

    Returns:
        ``A u`` along the last axis.
    """
    u = np.asarray(u, dtype=float)
    return u @ pn_flux_matrix(u.shape[-1] - 1, basis).T


def pn_ansatz(u: np.ndarray, q: AngularQuadrature) -> np.ndarray:
    """Node values of the polynomial ansatz ``m^T <m m^T>^{-1} u``.

    The values may be negative.
    """
    u = np.asarray(u, dtype=float)
    gram = _exact_gram(q.n_moments, q.basis)
    coefficients = scipy.linalg.solve(gram, u.reshape(-1, u.shape[-1]).T, assume_a="pos").T
    return (coefficients @ q.basis_at_nodes).reshape(*u.shape[:-1], q.n_total)
