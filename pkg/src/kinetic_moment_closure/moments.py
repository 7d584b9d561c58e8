"""Moment vectors: realizability, isotropic moments and regularization."""

from functools import cache

import numpy as np

from .errors import DegenerateMomentError, InvalidArgumentError
from .quadrature import AngularQuadrature


def isotropic_moments(n_moments: int) -> np.ndarray:
    """Monomial moments of the normalized isotropic density ``1/2``.

    Args:
        n_moments: Moment order ``N``.

    Returns:
        Vector with ``1 / (k + 1)`` for even ``k`` and ``0`` for odd ``k``.
    """
    k = np.arange(n_moments + 1)
    return np.where(k % 2 == 0, 1.0 / (k + 1), 0.0)


def moments_of_density(q: AngularQuadrature, f: np.ndarray) -> np.ndarray:
    """Integrate node values of a kinetic density against the basis.

    Args:
        q: Angular quadrature.
        f: Nonnegative density values, last axis over the angular nodes.

    Returns:
        Moments with the last axis of length ``N + 1``.

    Raises:
        InvalidArgumentError: If ``f`` has negative entries or the wrong length.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != q.n_total:
        raise InvalidArgumentError(
            f"Expected {q.n_total} node values, got shape {f.shape}"
        )
    if np.any(f < 0):
        raise InvalidArgumentError("Kinetic density values must be nonnegative")
    return (f * q.weights) @ q.basis_at_nodes.T


@cache
def _hankel_indices(n_moments: int) -> tuple[np.ndarray, ...]:
    """Index grids for the Hankel blocks of a moment vector of order ``N``."""
    n = n_moments // 2
    if n_moments % 2 == 1:
        idx = np.add.outer(np.arange(n + 1), np.arange(n + 1))
        return idx, idx + 1
    big = np.add.outer(np.arange(n + 1), np.arange(n + 1))
    small = np.add.outer(np.arange(n), np.arange(n))
    return big, small, small + 2


def hankel_blocks(u: np.ndarray) -> list[np.ndarray]:
    """Matrices whose positive definiteness characterizes strict realizability.

    For odd ``N = 2n + 1`` these are ``(u_{i+j} + u_{i+j+1})`` and
    ``(u_{i+j} - u_{i+j+1})`` for ``i, j = 0..n``. For even ``N = 2n`` they are
    ``(u_{i+j})`` for ``i, j = 0..n`` and ``(u_{i+j} - u_{i+j+2})`` for
    ``i, j = 0..n-1``.

    Args:
        u: Moment vector(s), last axis of length ``N + 1``.

    Returns:
        The list of (possibly batched) matrices.
    """
    u = np.asarray(u, dtype=float)
    n_moments = u.shape[-1] - 1
    if n_moments < 1:
        raise InvalidArgumentError("Moment vectors need at least two components")
    idx = _hankel_indices(n_moments)
    if n_moments % 2 == 1:
        lower, upper = idx
        return [u[..., lower] + u[..., upper], u[..., lower] - u[..., upper]]
    big, small, shifted = idx
    blocks = [u[..., big]]
    if small.size:
        blocks.append(u[..., small] - u[..., shifted])
    return blocks


def _is_positive_definite(matrix: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return False
    return True


def is_realizable(u: np.ndarray) -> bool:
    """Check strict realizability of a moment vector on [-1, 1].

    Args:
        u: Moment vector ``(u_0, ..., u_N)``.

    Returns:
        ``True`` iff every Hankel block is positive definite.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or not np.all(np.isfinite(u)):
        return False
    return all(_is_positive_definite(block) for block in hankel_blocks(u))


def realizable_mask(moments: np.ndarray) -> np.ndarray:
    """Vectorized :func:`is_realizable` over the leading axes.

    A batched Cholesky is attempted first; on failure every vector is
    tested on its own.

    Args:
        moments: Array ``(..., N + 1)``.

    Returns:
        Boolean array with the leading shape of ``moments``.
    """
    moments = np.asarray(moments, dtype=float)
    flat = moments.reshape(-1, moments.shape[-1])
    if np.all(np.isfinite(flat)):
        try:
            for block in hankel_blocks(flat):
                np.linalg.cholesky(block)
            return np.ones(moments.shape[:-1], dtype=bool)
        except np.linalg.LinAlgError:
            pass
    mask = np.fromiter((is_realizable(row) for row in flat), bool, len(flat))
    return mask.reshape(moments.shape[:-1])


def regularize(u: np.ndarray, r: float | np.ndarray) -> np.ndarray:
    """Blend moments toward the isotropic moments of the same density.

    Computes ``(1 - r) u + r u_0 u_iso``.

    Args:
        u: Moment vector(s), last axis of length ``N + 1``.
        r: Regularization parameter(s) in [0, 1], broadcast over leading axes.

    Returns:
        The regularized moments; the zeroth component is unchanged.

    Raises:
        InvalidArgumentError: If ``r`` lies outside [0, 1].
    """
    u = np.asarray(u, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0.0) or np.any(r_arr > 1.0):
        raise InvalidArgumentError(f"Regularization parameter must be in [0, 1], got {r!r}")
    r_arr = r_arr[..., None]
    iso = isotropic_moments(u.shape[-1] - 1)
    return (1.0 - r_arr) * u + r_arr * u[..., :1] * iso


def normalize(u: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a moment vector so that its zeroth component is one.

    Args:
        u: Moment vector.

    Returns:
        ``(u / u_0, u_0)``.

    Raises:
        DegenerateMomentError: If ``u_0 <= 0``.
    """
    u = np.asarray(u, dtype=float)
    scale = float(u[0])
    if not scale > 0.0:
        raise DegenerateMomentError(f"Zeroth moment must be positive, got {scale!r}")
    scaled = u / scale
    scaled[0] = 1.0
    return scaled, scale
