"""Dual Newton solver for the Maxwell-Boltzmann entropy closure.

For normalized moments ``u`` the multipliers minimize the strictly convex dual
objective ``<exp(m^T alpha)> - u^T alpha``. All kernels here work on a batch of
cells at once; the single-vector functions are thin wrappers used by tests and
by callers that close one cell at a time.
"""

import logging
import os
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .config import OptimizerConfig
from .errors import (
    AnsatzOverflowError,
    CholeskyFailure,
    DegenerateMomentError,
    NotConvergedError,
    RealizabilityError,
)
from .moments import regularize
from .quadrature import AngularQuadrature

logger = logging.getLogger(__name__)

EXP_LIMIT = 700.0

_CONVERGED = 0
_CHOLESKY = 1
_NOT_CONVERGED = 2
_OVERFLOW = 3

# below this many cells per worker threading costs more than it saves
_MIN_CELLS_PER_THREAD = 64


@dataclass(frozen=True)
class NewtonResult:
    """Outcome of a successful Newton solve.

    Attributes:
        alpha: Multipliers satisfying both stopping criteria (not shifted).
        iterations: Number of Newton iterations taken.
    """

    alpha: np.ndarray
    iterations: int


@dataclass(frozen=True)
class OptimizerResult:
    """Closure of a single moment vector.

    Attributes:
        alpha_bar: Shifted multipliers with ``<exp(m^T alpha_bar)> = 1``.
        r_used: Regularization parameter the solve converged at.
        iterations: Total Newton iterations over all attempts.
        scale: Zeroth moment removed by normalization.
    """

    alpha_bar: np.ndarray
    r_used: float
    iterations: int
    scale: float


@dataclass(frozen=True)
class BatchResult:
    """Closure of many cells at once.

    Attributes:
        alpha_bar: Shifted multipliers, shape ``(C, N + 1)``.
        r_used: Regularization parameter per cell.
        iterations: Newton iterations per cell.
        scale: Zeroth moment per cell.
        moments: Moments actually represented, ``scale * v(u / scale, r_used)``.
    """

    alpha_bar: np.ndarray
    r_used: np.ndarray
    iterations: np.ndarray
    scale: np.ndarray
    moments: np.ndarray

    @property
    def n_regularized(self) -> int:
        """Number of cells that needed regularization."""
        return int(np.count_nonzero(self.r_used > 0.0))


def isotropic_multipliers(n_moments: int) -> np.ndarray:
    """Multipliers of the normalized isotropic density ``1/2``."""
    alpha = np.zeros(n_moments + 1)
    alpha[0] = -np.log(2.0)
    return alpha


def _exponents(alpha: np.ndarray, q: AngularQuadrature) -> np.ndarray:
    return np.asarray(alpha, dtype=float) @ q.basis_at_nodes


def dual_objective(alpha: np.ndarray, u: np.ndarray, q: AngularQuadrature) -> float:
    """Evaluate ``<exp(m^T alpha)> - u^T alpha``.

    Raises:
        AnsatzOverflowError: If an exponent exceeds the overflow guard.
    """
    z = _exponents(alpha, q)
    if np.any(z > EXP_LIMIT):
        raise AnsatzOverflowError("Ansatz exponent exceeds the overflow guard")
    return float(np.exp(z) @ q.weights - np.dot(u, alpha))


def dual_gradient_hessian(
    alpha: np.ndarray, u: np.ndarray, q: AngularQuadrature
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the dual objective.

    Args:
        alpha: Multipliers.
        u: Normalized moment vector.
        q: Angular quadrature.

    Returns:
        ``g = <m exp(m^T alpha)> - u`` and ``H = <m m^T exp(m^T alpha)>``.

    Raises:
        AnsatzOverflowError: If an exponent exceeds the overflow guard.
    """
    z = _exponents(alpha, q)
    if np.any(z > EXP_LIMIT):
        raise AnsatzOverflowError("Ansatz exponent exceeds the overflow guard")
    psi_w = np.exp(z) * q.weights
    basis = q.basis_at_nodes
    g = basis @ psi_w - np.asarray(u, dtype=float)
    hessian = (basis * psi_w) @ basis.T
    return g, hessian


def shift_zeroth(alpha: np.ndarray, q: AngularQuadrature) -> np.ndarray:
    """Shift ``alpha_0`` so that the ansatz has unit zeroth moment.

    Works on a single vector or on a batch along the leading axes.
    """
    alpha = np.array(alpha, dtype=float)
    log_u0 = logsumexp(_exponents(alpha, q), b=q.weights, axis=-1)
    alpha[..., 0] -= log_u0
    return alpha


def _cholesky_mask(hessians: np.ndarray) -> np.ndarray:
    """Which matrices of a batch admit a Cholesky factorization."""
    finite = np.all(np.isfinite(hessians), axis=(-2, -1))
    try:
        if finite.all():
            np.linalg.cholesky(hessians)
            return finite
    except np.linalg.LinAlgError:
        pass
    mask = np.zeros(hessians.shape[0], dtype=bool)
    for c in np.flatnonzero(finite):
        try:
            np.linalg.cholesky(hessians[c])
            mask[c] = True
        except np.linalg.LinAlgError:
            pass
    return mask


def _newton_kernel(
    u: np.ndarray,
    alpha_init: np.ndarray,
    cfg: OptimizerConfig,
    q: AngularQuadrature,
    max_iter: int,
    callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Damped Newton iteration on a batch of normalized moment vectors.

    Returns:
        ``(alpha, status, iterations)`` per cell.
    """
    n_cells = u.shape[0]
    basis = q.basis_at_nodes
    weights = q.weights
    alpha = np.array(alpha_init, dtype=float, copy=True)
    status = np.full(n_cells, _NOT_CONVERGED)
    iterations = np.zeros(n_cells, dtype=int)
    # tolerance recomputed per target vector
    tol_grad = cfg.tau / (1.0 + np.linalg.norm(u, axis=1) + cfg.tau)
    roundoff = 16.0 * np.finfo(float).eps
    active = np.arange(n_cells)

    for it in range(max_iter + 1):
        if active.size == 0:
            break
        a = alpha[active]
        ua = u[active]
        z = a @ basis
        overflow = np.any(z > EXP_LIMIT, axis=1)
        if overflow.any():
            status[active[overflow]] = _OVERFLOW
            keep = ~overflow
            active, a, ua, z = active[keep], a[keep], ua[keep], z[keep]
            if active.size == 0:
                break

        psi_w = np.exp(z) * weights
        moments = psi_w @ basis.T
        g = moments - ua
        hessian = np.einsum("cq,iq,jq->cij", psi_w, basis, basis)
        factorable = _cholesky_mask(hessian)
        if not factorable.all():
            status[active[~factorable]] = _CHOLESKY
            active, a, ua = active[factorable], a[factorable], ua[factorable]
            moments, g, hessian = moments[factorable], g[factorable], hessian[factorable]
            if active.size == 0:
                break

        d = -np.linalg.solve(hessian, g[..., None])[..., 0]
        grad_ok = np.linalg.norm(g, axis=1) < tol_grad[active]
        # ||m||_inf = 1 for monomials on [-1, 1]
        ratio_ok = 1.0 - cfg.eps < np.exp(
            -np.abs(d).sum(axis=1) - np.abs(np.log(moments[:, 0]))
        )
        done = grad_ok & ratio_ok
        status[active[done]] = _CONVERGED
        if done.any():
            keep = ~done
            active, a, ua = active[keep], a[keep], ua[keep]
            moments, g, d = moments[keep], g[keep], d[keep]
        if active.size == 0 or it == max_iter:
            break

        f0 = moments[:, 0] - np.einsum("ci,ci->c", ua, a)
        slope = np.einsum("ci,ci->c", g, d)
        step = np.ones(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        new_alpha = a.copy()
        for _ in range(cfg.max_line_search):
            pending = np.flatnonzero(~accepted)
            if pending.size == 0:
                break
            trial = a[pending] + step[pending, None] * d[pending]
            zt = trial @ basis
            ft = np.exp(np.minimum(zt, EXP_LIMIT)) @ weights - np.einsum(
                "ci,ci->c", ua[pending], trial
            )
            ft[np.any(zt > EXP_LIMIT, axis=1)] = np.inf
            # objective changes below roundoff are accepted
            bound = (
                f0[pending]
                + cfg.chi * step[pending] * slope[pending]
                + roundoff * np.abs(f0[pending])
            )
            good = ft <= bound
            new_alpha[pending[good]] = trial[good]
            accepted[pending[good]] = True
            step[pending[~good]] *= 0.5

        iterations[active] += 1
        alpha[active[accepted]] = new_alpha[accepted]
        active = active[accepted]
        if callback is not None:
            callback(alpha.copy())

    return alpha, status, iterations


def newton_solve(
    u: np.ndarray,
    alpha_init: np.ndarray,
    cfg: OptimizerConfig,
    q: AngularQuadrature,
    *,
    max_iter: int | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> NewtonResult:
    """Solve the dual problem for one normalized moment vector.

    The iteration stops at the first iterate where ``||g||_2 < tau'`` with
    ``tau' = tau / (1 + ||u|| + tau)`` and
    ``1 - eps < exp(-||d||_1 - |log u_0(alpha)|)`` for the Newton direction
    ``d = -H^{-1} g``.

    Args:
        u: Normalized moments (``u_0 = 1``).
        alpha_init: Initial multipliers.
        cfg: Optimizer parameters.
        q: Angular quadrature.
        max_iter: Iteration budget, ``cfg.k_r`` by default.
        callback: Called with the multipliers after every accepted iterate.

    Returns:
        The multipliers and the iteration count.

    Raises:
        CholeskyFailure: If the Hessian cannot be factorized.
        NotConvergedError: If the budget runs out or the line search stalls.
        AnsatzOverflowError: If the iterate overflows the exponential.
    """
    budget = cfg.k_r if max_iter is None else max_iter
    u_arr = np.asarray(u, dtype=float)[None, :]
    a0 = np.asarray(alpha_init, dtype=float)[None, :]

    def _single(batch: np.ndarray) -> None:
        if callback is not None:
            callback(batch[0])

    alpha, status, iterations = _newton_kernel(u_arr, a0, cfg, q, budget, _single)
    if status[0] == _CHOLESKY:
        raise CholeskyFailure("Dual Hessian is not positive definite")
    if status[0] == _OVERFLOW:
        raise AnsatzOverflowError("Ansatz exponent exceeds the overflow guard")
    if status[0] == _NOT_CONVERGED:
        raise NotConvergedError(
            f"Stopping criteria not met after {int(iterations[0])} iterations"
        )
    return NewtonResult(alpha=alpha[0], iterations=int(iterations[0]))


def _solve_batch(
    moments: np.ndarray,
    alpha_init: np.ndarray,
    cfg: OptimizerConfig,
    q: AngularQuadrature,
    offset: int = 0,
) -> BatchResult:
    scale = moments[:, 0].copy()
    bad = ~(scale > 0.0) | ~np.all(np.isfinite(moments), axis=1)
    if bad.any():
        raise DegenerateMomentError(
            f"Non-positive zeroth moment in cells {(np.flatnonzero(bad) + offset).tolist()}"
        )
    normalized = moments / scale[:, None]
    normalized[:, 0] = 1.0
    n_cells, n_comp = normalized.shape
    iso = np.broadcast_to(isotropic_multipliers(n_comp - 1), (n_cells, n_comp))

    target = normalized.copy()
    r_used = np.zeros(n_cells)
    alpha, status, iterations = _newton_kernel(normalized, alpha_init, cfg, q, cfg.k_r)
    pending = np.flatnonzero(status != _CONVERGED)

    if pending.size:
        logger.debug("Restarting %d cells from isotropic multipliers", pending.size)
        a, st, its = _newton_kernel(
            normalized[pending], iso[pending], cfg, q, cfg.k_r
        )
        iterations[pending] += its
        ok = st == _CONVERGED
        alpha[pending[ok]] = a[ok]
        pending = pending[~ok]

    for r in cfg.r_sequence:
        if pending.size == 0:
            break
        regularized = regularize(normalized[pending], r)
        a, st, its = _newton_kernel(regularized, iso[pending], cfg, q, cfg.k_r)
        iterations[pending] += its
        ok = st == _CONVERGED
        alpha[pending[ok]] = a[ok]
        target[pending[ok]] = regularized[ok]
        r_used[pending[ok]] = r
        pending = pending[~ok]

    if pending.size:
        raise RealizabilityError(
            f"Optimizer failed at the largest regularization r={cfg.r_sequence[-1]:g}",
            cells=(pending + offset).tolist(),
        )
    n_reg = int(np.count_nonzero(r_used))
    if n_reg:
        logger.debug("Regularized %d of %d cells", n_reg, n_cells)
    return BatchResult(
        alpha_bar=shift_zeroth(alpha, q),
        r_used=r_used,
        iterations=iterations,
        scale=scale,
        moments=target * scale[:, None],
    )


def solve_cells(
    moments: np.ndarray,
    alpha_init: np.ndarray,
    cfg: OptimizerConfig,
    q: AngularQuadrature,
    *,
    threads: int = 1,
) -> BatchResult:
    """Close every cell of a stage.

    Each cell tries ``r = 0`` from its warm start, then ``r = 0`` from the
    isotropic multipliers, then every level of ``cfg.r_sequence`` from the
    isotropic multipliers, ``cfg.k_r`` iterations per attempt.

    Args:
        moments: Cell moments, shape ``(C, N + 1)``.
        alpha_init: Warm-start multipliers, shape ``(C, N + 1)``.
        cfg: Optimizer parameters.
        q: Angular quadrature.
        threads: Worker threads; ``0`` picks the CPU count.

    Returns:
        Multipliers and bookkeeping for all cells.

    Raises:
        DegenerateMomentError: If a cell has a non-positive zeroth moment.
        RealizabilityError: If a cell fails at the largest regularization.
    """
    moments = np.atleast_2d(np.asarray(moments, dtype=float))
    alpha_init = np.broadcast_to(
        np.asarray(alpha_init, dtype=float), moments.shape
    ).copy()
    workers = threads or os.cpu_count() or 1
    workers = min(workers, max(1, moments.shape[0] // _MIN_CELLS_PER_THREAD))
    if workers <= 1:
        return _solve_batch(moments, alpha_init, cfg, q)

    chunks = np.array_split(np.arange(moments.shape[0]), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_solve_batch, moments[idx], alpha_init[idx], cfg, q, int(idx[0]))
            for idx in chunks
        ]
    results: list[BatchResult] = []
    failed: list[int] = []
    for future in futures:
        try:
            results.append(future.result())
        except RealizabilityError as e:
            failed.extend(e.cells)
    if failed:
        raise RealizabilityError(
            f"Optimizer failed at the largest regularization r={cfg.r_sequence[-1]:g}",
            cells=failed,
        )
    return BatchResult(
        alpha_bar=np.concatenate([r.alpha_bar for r in results]),
        r_used=np.concatenate([r.r_used for r in results]),
        iterations=np.concatenate([r.iterations for r in results]),
        scale=np.concatenate([r.scale for r in results]),
        moments=np.concatenate([r.moments for r in results]),
    )


def solve_with_regularization(
    u: np.ndarray,
    alpha_init: np.ndarray,
    cfg: OptimizerConfig,
    q: AngularQuadrature,
) -> OptimizerResult:
    """Close one moment vector with the restart and regularization policy.

    Args:
        u: Moment vector with ``u_0 > 0``.
        alpha_init: Warm-start multipliers for the normalized problem.
        cfg: Optimizer parameters.
        q: Angular quadrature.

    Returns:
        The shifted multipliers with their bookkeeping.

    Raises:
        DegenerateMomentError: If ``u_0 <= 0``.
        RealizabilityError: If the largest regularization level still fails.
    """
    batch = _solve_batch(
        np.asarray(u, dtype=float)[None, :],
        np.asarray(alpha_init, dtype=float)[None, :],
        cfg,
        q,
    )
    return OptimizerResult(
        alpha_bar=batch.alpha_bar[0],
        r_used=float(batch.r_used[0]),
        iterations=int(batch.iterations[0]),
        scale=float(batch.scale[0]),
    )
