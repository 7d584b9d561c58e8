"""Rooted trees, B-series and the search for SSP multistep coefficients.

Every value of a multistep method in Shu-Osher form (past solution values,
stages, forward-Euler steps of either) has a B-series about ``u(t_n)``. The
method has order ``p`` when the B-series of its output agrees with the exact
flow ``u(t_n + dt)`` on every rooted tree with at most ``p`` nodes. Times are
measured in units of ``dt`` and an Euler step has size ``1 / rho``.
"""

import logging
from dataclasses import dataclass
from functools import cache

import numpy as np
from scipy.optimize import least_squares

logger = logging.getLogger(__name__)

_COMPLEX_STEP = 1e-30


@dataclass(frozen=True)
class TreeSet:
    """All rooted trees up to a given order.

    Attributes:
        order: Node count of each tree.
        gamma: Density ``gamma(tau)`` of each tree.
        children: Child indices padded with ``len(order)``, the index of a
            constant-one column appended before taking products.
    """

    order: np.ndarray
    gamma: np.ndarray
    children: np.ndarray

    def __len__(self) -> int:
        """Number of trees."""
        return int(self.order.shape[0])


@cache
def rooted_trees(max_order: int) -> TreeSet:
    """Enumerate the rooted trees with at most ``max_order`` nodes.

    Trees are canonical sorted tuples of child indices; order ``p`` has
    1, 1, 2, 4, 9, 20, 48, ... trees.
    """
    trees: list[tuple[int, ...]] = [()]
    orders = [1]

    def multisets(budget: int, min_index: int) -> list[tuple[int, ...]]:
        """Sorted child tuples with total order ``budget``."""
        if budget == 0:
            return [()]
        found: list[tuple[int, ...]] = []
        for idx in range(min_index, len(trees)):
            if orders[idx] <= budget:
                for rest in multisets(budget - orders[idx], idx):
                    found.append((idx, *rest))
        return found

    for n in range(2, max_order + 1):
        # children drawn only from trees of lower order, all already listed
        for kids in multisets(n - 1, 0):
            trees.append(kids)
            orders.append(n)

    gamma = np.zeros(len(trees))
    for i, kids in enumerate(trees):
        gamma[i] = orders[i] * np.prod([gamma[k] for k in kids]) if kids else 1.0
    width = max((len(k) for k in trees), default=0) or 1
    children = np.full((len(trees), width), len(trees), dtype=int)
    for i, kids in enumerate(trees):
        children[i, : len(kids)] = kids
    return TreeSet(order=np.array(orders), gamma=gamma, children=children)


def derivative_series(a: np.ndarray, trees: TreeSet) -> np.ndarray:
    """B-series of ``dt * f(y)`` from the B-series ``a`` of ``y``."""
    padded = np.concatenate([a, np.ones_like(a[..., :1])], axis=-1)
    return np.prod(padded[..., trees.children], axis=-1)


def exact_series(time: float, trees: TreeSet) -> np.ndarray:
    """B-series of the exact solution ``u(t_n + time * dt)``."""
    return time ** trees.order / trees.gamma


@dataclass(frozen=True)
class MultistepLayout:
    """Which coefficients a design may use.

    Row ``r`` builds stage ``r + 2`` for ``r < stages - 1`` and the output for
    the last row. Every row may use the past values ``u^{n-l}``, the Euler
    steps of the stages already computed and, when ``euler_past`` is set, the
    Euler steps of the older past values; the weight of ``u^n`` is the
    remainder of the row.
    """

    steps: int
    stages: int
    euler_past: bool = False

    @property
    def _n_past(self) -> int:
        return (self.steps - 1) * (2 if self.euler_past else 1)

    def row_size(self, r: int) -> int:
        """Free parameters in row ``r``."""
        return self._n_past + (r + 1)

    @property
    def n_params(self) -> int:
        """Total free parameters."""
        return sum(self.row_size(r) for r in range(self.stages))

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Split a (batched) parameter vector into coefficient arrays.

        Returns:
            ``past_plain (P, s, m)``, ``past_euler (P, s, m)`` and
            ``stage_euler (P, s, s)``.
        """
        x = np.atleast_2d(x)
        batch = x.shape[0]
        m, s = self.steps, self.stages
        past_plain = np.zeros((batch, s, m), dtype=x.dtype)
        past_euler = np.zeros((batch, s, m), dtype=x.dtype)
        stage_euler = np.zeros((batch, s, s), dtype=x.dtype)
        pos = 0
        for r in range(s):
            past_plain[:, r, 1:] = x[:, pos : pos + m - 1]
            pos += m - 1
            if self.euler_past:
                past_euler[:, r, 1:] = x[:, pos : pos + m - 1]
                pos += m - 1
            stage_euler[:, r, : r + 1] = x[:, pos : pos + r + 1]
            pos += r + 1
            used = past_plain[:, r, 1:].sum(-1) + past_euler[:, r].sum(-1)
            past_plain[:, r, 0] = 1.0 - used - stage_euler[:, r].sum(-1)
        return {
            "past_plain": past_plain,
            "past_euler": past_euler,
            "stage_euler": stage_euler,
        }


def method_series(
    coefficients: dict[str, np.ndarray], rho: float, trees: TreeSet
) -> tuple[np.ndarray, np.ndarray]:
    """B-series of every stage and of the output of a Shu-Osher multistep method.

    Args:
        coefficients: Arrays as returned by :meth:`MultistepLayout.unpack`,
            optionally with ``stage_plain (P, s, s)``.
        rho: Radius of absolute monotonicity; Euler steps have size ``1/rho``.
        trees: Trees to expand over.

    Returns:
        ``(stages (P, s, T), output (P, T))``.
    """
    past_plain = coefficients["past_plain"]
    past_euler = coefficients["past_euler"]
    stage_euler = coefficients["stage_euler"]
    stage_plain = coefficients.get("stage_plain")
    batch, s, m = past_plain.shape
    h = 1.0 / rho
    past = np.stack([exact_series(-float(l), trees) for l in range(m)])
    past_step = past + h * derivative_series(past, trees)
    stages = [np.broadcast_to(past[0], (batch, len(trees))).astype(past_plain.dtype)]
    steps = [stages[0] + h * derivative_series(stages[0], trees)]
    value = stages[0]
    for r in range(s):
        value = past_plain[:, r] @ past + past_euler[:, r] @ past_step
        for j in range(r + 1):
            value = value + stage_euler[:, r, j, None] * steps[j]
            if stage_plain is not None:
                value = value + stage_plain[:, r, j, None] * stages[j]
        if r < s - 1:
            stages.append(value)
            steps.append(value + h * derivative_series(value, trees))
    return np.stack(stages, axis=1), value


def order_defects(
    coefficients: dict[str, np.ndarray], rho: float, order: int
) -> np.ndarray:
    """Output B-series minus the exact flow on every tree up to ``order``."""
    trees = rooted_trees(order)
    _, output = method_series(coefficients, rho, trees)
    return output - exact_series(1.0, trees)


def _residual(
    x: np.ndarray, layout: MultistepLayout, rho: float, order: int
) -> np.ndarray:
    coefficients = layout.unpack(x)
    defects = order_defects(coefficients, rho, order)
    remainder = coefficients["past_plain"][:, :, 0]
    negative = np.where(remainder.real < 0.0, remainder, 0.0)
    return np.concatenate([defects, negative], axis=-1)


def design_coefficients(
    layout: MultistepLayout,
    order: int,
    rho: float,
    *,
    seed: int = 0,
    restarts: int = 6,
    max_nfev: int = 400,
    tol: float = 1e-13,
) -> dict[str, np.ndarray] | None:
    """Search nonnegative coefficients of the given order at a fixed ``rho``.

    Bounded nonlinear least squares on the order defects and on the negative
    part of each row remainder, with a complex-step Jacobian.

    Args:
        layout: Available coefficients.
        order: Target order.
        rho: Radius of absolute monotonicity to design for.
        seed: Base seed of the random starting points.
        restarts: Number of starting points to try.
        max_nfev: Evaluation budget per start.
        tol: Largest acceptable defect.

    Returns:
        Coefficient arrays without the batch axis, or ``None``.
    """
    n = layout.n_params
    perturb = np.eye(n) * (1j * _COMPLEX_STEP)

    def fun(x: np.ndarray) -> np.ndarray:
        return _residual(x[None, :], layout, rho, order)[0]

    def jac(x: np.ndarray) -> np.ndarray:
        shifted = x[None, :].astype(complex) + perturb
        return (_residual(shifted, layout, rho, order).imag / _COMPLEX_STEP).T

    for attempt in range(restarts):
        rng = np.random.default_rng(seed + attempt)
        x0 = np.empty(0)
        for r in range(layout.stages):
            width = layout.row_size(r)
            x0 = np.concatenate([x0, rng.uniform(0.0, 1.5 / (width + 1), width)])
        result = least_squares(
            fun,
            x0,
            jac=jac,
            bounds=(0.0, 1.0),
            method="trf",
            ftol=1e-15,
            xtol=1e-15,
            gtol=1e-15,
            max_nfev=max_nfev,
        )
        worst = float(np.max(np.abs(fun(result.x))))
        logger.debug("rho=%.4f start %d: worst defect %.3e", rho, attempt, worst)
        if worst <= tol:
            coefficients = layout.unpack(np.clip(result.x, 0.0, 1.0))
            return {key: value[0] for key, value in coefficients.items()}
    return None
