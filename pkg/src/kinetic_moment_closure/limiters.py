"""Linear scaling limiters on the in-cell kinetic reconstruction.

Both limiters contract the reconstruction toward its cell mean,
``(1 - theta) * mean + theta * psi(x)``, with one ``theta`` per cell and
angular node, so cell means are preserved exactly.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import LimiterConfig
from .errors import InvalidStateError
from .weno import CellReconstruction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LimiterStats:
    """Activity of one limiter application.

    Attributes:
        n_limited: Number of (cell, angular node) pairs with ``theta < 1``.
        min_theta: Smallest ``theta`` over the physical cells.
        n_mean_out_of_bounds: Pairs whose mean violated the local bounds.
    """

    n_limited: int = 0
    min_theta: float = 1.0
    n_mean_out_of_bounds: int = 0


def _positivity_theta(mean: np.ndarray, values: np.ndarray) -> np.ndarray:
    mean = mean[..., None]
    denom = mean - values
    ratio = np.divide(mean, denom, out=np.ones_like(values), where=values < 0.0)
    return np.minimum(1.0, ratio.min(axis=-1))


def _scale(mean: np.ndarray, values: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return (1.0 - theta[..., None]) * mean[..., None] + theta[..., None] * values


def positivity_limit(
    mean: np.ndarray | float, values: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Scale node values toward the mean until none is negative.

    Args:
        mean: Cell mean(s), strictly positive.
        values: Reconstruction at the spatial nodes, last axis over nodes.

    Returns:
        ``(theta, limited)`` with ``theta`` in [0, 1].

    Raises:
        InvalidStateError: If a mean is not positive.

    Example:
        >>> theta, limited = positivity_limit(1.0, np.array([2.0, -1.0]))
        >>> float(theta), limited.tolist()
        (0.5, [1.5, 0.0])
    """
    mean = np.asarray(mean, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(~(mean > 0.0)):
        raise InvalidStateError("Positivity limiter needs positive cell means")
    theta = _positivity_theta(mean, values)
    limited = np.maximum(_scale(mean, values, theta), 0.0)
    return theta, limited


def _max_principle_theta(
    mean: np.ndarray, values: np.ndarray, upper: np.ndarray, lower: np.ndarray
) -> np.ndarray:
    m = mean[..., None]
    dev = values - m
    above = values > upper[..., None]
    below = values < lower[..., None]
    theta_up = np.divide(
        upper[..., None] - m, dev, out=np.ones_like(values), where=above
    )
    theta_low = np.divide(
        lower[..., None] - m, dev, out=np.ones_like(values), where=below
    )
    theta = np.clip(np.minimum(theta_up, theta_low).min(axis=-1), 0.0, 1.0)
    outside = (mean > upper) | (mean < lower)
    return np.where(outside, 0.0, theta)


def max_principle_limit(
    mean: np.ndarray | float,
    values: np.ndarray,
    upper: np.ndarray | float,
    lower: np.ndarray | float,
) -> tuple[np.ndarray, np.ndarray]:
    """Scale node values toward the mean until they lie in ``[lower, upper]``.

    A mean that itself violates the bounds flattens the reconstruction
    (``theta = 0``).

    Args:
        mean: Cell mean(s).
        values: Reconstruction at the spatial nodes, last axis over nodes.
        upper: Local upper bound ``M_j``.
        lower: Local lower bound ``m_j``.

    Returns:
        ``(theta, limited)``.
    """
    mean = np.asarray(mean, dtype=float)
    values = np.asarray(values, dtype=float)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), mean.shape)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), mean.shape)
    theta = _max_principle_theta(mean, values, upper, lower)
    limited = _scale(mean, values, theta)
    limited = np.clip(limited, lower[..., None], upper[..., None])
    inside = (mean >= lower) & (mean <= upper)
    limited = np.where(inside[..., None], limited, mean[..., None])
    return theta, limited


def mean_out_of_bounds(
    mean: np.ndarray, upper: np.ndarray, lower: np.ndarray
) -> int:
    """Count means outside their local bounds."""
    return int(np.count_nonzero((mean > upper) | (mean < lower)))


def local_bounds(
    window: np.ndarray, c: float, dx: float
) -> tuple[np.ndarray, np.ndarray]:
    """Relaxed local maximum-principle bounds.

    Args:
        window: Means over the ``2k + 1`` cells ``j - k .. j + k`` and all
            angular nodes, shape ``(..., 2k + 1, nQ)``.
        c: Bound on ``|d_x psi / psi|``; capped at ``2 / dx``.
        dx: Cell width.

    Returns:
        ``(M_j, m_j) = ((1 + c dx / 2) max, (1 - c dx / 2) min)``.
    """
    window = np.asarray(window, dtype=float)
    half = 0.5 * min(c, 2.0 / dx) * dx
    hi = window.max(axis=(-2, -1))
    lo = window.min(axis=(-2, -1))
    return (1.0 + half) * hi, np.maximum((1.0 - half) * lo, 0.0)


def cell_bounds(
    means_ext: np.ndarray, k: int, c: float, dx: float
) -> tuple[np.ndarray, np.ndarray]:
    """:func:`local_bounds` for every cell of a ghost-extended array.

    Args:
        means_ext: Means ``(n + 2k, nQ)``.
        k: Half width of the influence window.
        c: Bound on ``|d_x psi / psi|``.
        dx: Cell width.

    Returns:
        Bounds for the ``n`` cells that have a full window.
    """
    per_cell_max = means_ext.max(axis=1)
    per_cell_min = means_ext.min(axis=1)
    half = 0.5 * min(c, 2.0 / dx) * dx
    hi = sliding_window_view(per_cell_max, 2 * k + 1).max(axis=-1)
    lo = sliding_window_view(per_cell_min, 2 * k + 1).min(axis=-1)
    return (1.0 + half) * hi, np.maximum((1.0 - half) * lo, 0.0)


def apply_limiter(
    recon: CellReconstruction,
    cfg: LimiterConfig,
    *,
    upper: np.ndarray | None = None,
    lower: np.ndarray | None = None,
) -> tuple[CellReconstruction, LimiterStats]:
    """Limit every (cell, angular node) of a reconstruction.

    The first and last rows are ghost cells; they are limited like the others
    but excluded from the statistics, and a zero ghost mean is flattened.

    Args:
        recon: Unlimited reconstruction.
        cfg: Limiter mode and derivative bound.
        upper: Per-cell upper bounds, required for ``max_principle``.
        lower: Per-cell lower bounds, required for ``max_principle``.

    Returns:
        The limited reconstruction and its statistics.

    Raises:
        InvalidStateError: If a physical cell mean is not positive.
    """
    if cfg.mode == "off":
        return recon, LimiterStats()
    means = recon.means
    if np.any(~(means[1:-1] > 0.0)) or np.any(means < 0.0):
        raise InvalidStateError("Limiter reached a non-positive cell mean")
    if cfg.mode == "positivity":
        theta = _positivity_theta(means, recon.interior)
        n_out = 0
    else:
        if upper is None or lower is None:
            raise InvalidStateError("Maximum-principle limiter needs local bounds")
        hi = np.broadcast_to(upper[:, None], means.shape)
        lo = np.broadcast_to(lower[:, None], means.shape)
        theta = _max_principle_theta(means, recon.interior, hi, lo)
        n_out = mean_out_of_bounds(means[1:-1], hi[1:-1], lo[1:-1])
        if n_out:
            logger.debug("%d cell means outside their local bounds", n_out)
    limited = recon.scaled(theta)
    physical = theta[1:-1]
    stats = LimiterStats(
        n_limited=int(np.count_nonzero(physical < 1.0)),
        min_theta=float(physical.min()) if physical.size else 1.0,
        n_mean_out_of_bounds=n_out,
    )
    return limited, stats

