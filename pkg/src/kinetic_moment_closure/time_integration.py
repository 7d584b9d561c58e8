"""Strong-stability-preserving one-step and multistep Runge-Kutta methods.

Every method is stored in one Shu-Osher form. Stage ``y_1`` is ``u^n``; row
``r`` of the coefficient matrices builds stage ``r + 2`` and the last row
builds ``u^{n+1}``:

    y = sum_l past_plain[r, l] u^{n-l} + past_euler[r, l] E(u^{n-l})
        + sum_j stage_plain[r, j] y_j + stage_euler[r, j] E(y_j)

with ``E(v) = v + (dt / rho) L(v)`` and every row a convex combination.
A stable forward-Euler step therefore bounds the whole method whenever
``dt <= rho * dt_FE``.

The right-hand side is an evaluator ``evaluate(t, u) -> (u_eff, du)``:
Euler steps are taken from ``u_eff``, plain terms use the stored state. Any
callable ``rhs(t, u) -> du`` is accepted as well.
"""

import hashlib
import json
import logging
import math
import os
import re
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cache, cached_property
from importlib import resources
from pathlib import Path
from typing import Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ._order_conditions import MultistepLayout, design_coefficients, order_defects
from .errors import InvalidArgumentError, NeedsStartupError, TableauError

logger = logging.getLogger(__name__)

Matrix = tuple[tuple[float, ...], ...]

_CONVEXITY_TOL = 1e-12
_ORDER_TOL = 1e-10

# effective CFL rho / s every registered method must reach
EFFECTIVE_CFL: dict[str, float] = {
    "SSPRK(1,1,1)": 1.0,
    "SSPRK(1,2,20)": 0.95,
    "SSPRK(1,3,16)": 0.75,
    "SSPRK(1,4,10)": 0.6,
    "TSRK(2,5,8)": 0.4474,
    "TSRK(2,6,12)": 0.3653,
    # startup helper only: rho 2.7659 over 12 stages
    "TSRK(2,7,12)": 0.2305,
    "MSRK(5,7,12)": 0.3089,
}
CFL_TOLERANCE = 0.005

# (steps, order, stages) of the methods read from coefficient files
_MULTISTEP: dict[str, tuple[int, int, int]] = {
    "TSRK(2,5,8)": (2, 5, 8),
    "TSRK(2,6,12)": (2, 6, 12),
    "TSRK(2,7,12)": (2, 7, 12),
    "MSRK(5,7,12)": (5, 7, 12),
}
# fractions of the rho tolerance below the target tried by a design
_DESIGN_MARGINS = (0.1, 0.4, 0.7, 0.95)

TABLEAU_DIR_ENV = "KINETIC_MOMENT_CLOSURE_TABLEAUX"

TABLEAU_NAMES: tuple[str, ...] = tuple(EFFECTIVE_CFL)

STARTUP_TABLEAU = "SSPRK(1,4,10)"
MSRK_STARTUP_TABLEAU = "TSRK(2,7,12)"


class SspTableau(BaseModel):
    """Coefficients of an SSP method in Shu-Osher form.

    Attributes:
        name: Registry name, e.g. ``"TSRK(2,5,8)"``.
        steps: Number of past solution values ``m``.
        order: Order of accuracy.
        stages: Right-hand-side evaluations per step ``s``.
        rho: Radius of absolute monotonicity.
        target_rho: Value ``rho`` was designed for, when designed in-house.
        past_plain: ``(s, m)`` weights of ``u^{n-l}``.
        past_euler: ``(s, m)`` weights of ``E(u^{n-l})``.
        stage_plain: ``(s, s)`` weights of ``y_j``.
        stage_euler: ``(s, s)`` weights of ``E(y_j)``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    steps: int = Field(ge=1)
    order: int = Field(ge=1)
    stages: int = Field(ge=1)
    rho: float = Field(gt=0.0)
    target_rho: float | None = None
    past_plain: Matrix
    past_euler: Matrix
    stage_plain: Matrix
    stage_euler: Matrix

    @model_validator(mode="after")
    def _check_form(self) -> "SspTableau":
        """Shapes, explicitness and convexity of every row."""
        s, m = self.stages, self.steps
        shapes = {
            "past_plain": (s, m),
            "past_euler": (s, m),
            "stage_plain": (s, s),
            "stage_euler": (s, s),
        }
        arrays = {}
        for key, shape in shapes.items():
            arr = np.asarray(getattr(self, key), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{key} must have shape {shape}, got {arr.shape}")
            if np.any(arr < -_CONVEXITY_TOL):
                raise ValueError(f"{key} has a negative coefficient")
            arrays[key] = arr
        future = np.triu(np.ones((s, s)), k=1).astype(bool)
        if np.any(arrays["stage_plain"][future]) or np.any(arrays["stage_euler"][future]):
            raise ValueError("A row refers to a stage that is not computed yet")
        sums = sum(arr.sum(axis=1) for arr in arrays.values())
        if np.any(np.abs(sums - 1.0) > 1e-10):
            raise ValueError("Every row must be a convex combination")
        return self

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Coefficient matrices as read-only arrays."""
        out = {}
        for key in ("past_plain", "past_euler", "stage_plain", "stage_euler"):
            arr = np.asarray(getattr(self, key), dtype=float)
            arr.setflags(write=False)
            out[key] = arr
        return out

    @property
    def effective_cfl(self) -> float:
        """``rho`` per right-hand-side evaluation."""
        return self.rho / self.stages

    @cached_property
    def abscissae(self) -> np.ndarray:
        """Time of every stage ``y_j`` relative to ``t_n``, in units of ``dt``."""
        a = self.arrays
        h = 1.0 / self.rho
        past = -np.arange(self.steps, dtype=float)
        c = [0.0]
        for r in range(self.stages - 1):
            stage = np.asarray(c)
            value = a["past_plain"][r] @ past + a["past_euler"][r] @ (past + h)
            value += a["stage_plain"][r, : r + 1] @ stage
            value += a["stage_euler"][r, : r + 1] @ (stage + h)
            c.append(float(value))
        return np.asarray(c)

    def low_storage(self) -> dict[str, np.ndarray]:
        """Two-step coefficients ``d, q, zeta, eta``.

        Stage ``l + 2`` is ``d[l] u^{n-1} + (1 - d[l] - sum q[l]) u^n +
        sum_j q[l, j] E(y_{j+1})`` and the output uses ``zeta`` and ``eta`` the
        same way.

        Raises:
            InvalidArgumentError: If the method does not have this form.
        """
        a = self.arrays
        if self.steps != 2 or np.any(a["past_euler"]) or np.any(a["stage_plain"]):
            raise InvalidArgumentError(f"{self.name} has no two-step low-storage form")
        return {
            "d": a["past_plain"][:-1, 1],
            "q": a["stage_euler"][:-1],
            "zeta": a["past_plain"][-1, 1],
            "eta": a["stage_euler"][-1],
        }

    def order_defects(self, order: int | None = None) -> np.ndarray:
        """Order-condition residuals on every rooted tree up to ``order``."""
        coefficients = {key: arr[None] for key, arr in self.arrays.items()}
        return order_defects(coefficients, self.rho, order or self.order)[0]

    def check_certificate(self, tol: float = _ORDER_TOL) -> None:
        """Verify the claimed order from the coefficients.

        Raises:
            TableauError: If an order condition is violated by more than ``tol``.
        """
        worst = float(np.max(np.abs(self.order_defects())))
        if worst > tol:
            raise TableauError(
                f"{self.name} violates its order conditions (defect {worst:.3e})"
            )

    def checksum(self) -> str:
        """SHA-256 of the canonical JSON of the tableau."""
        canonical = json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


class _Rows:
    """Mutable coefficient matrices used while assembling a tableau."""

    def __init__(self, steps: int, stages: int):
        self.past_plain = np.zeros((stages, steps))
        self.past_euler = np.zeros((stages, steps))
        self.stage_plain = np.zeros((stages, stages))
        self.stage_euler = np.zeros((stages, stages))

    def build(self, name: str, order: int, rho: float, **extra) -> SspTableau:
        steps = self.past_plain.shape[1]
        stages = self.past_plain.shape[0]
        return SspTableau(
            name=name,
            steps=steps,
            order=order,
            stages=stages,
            rho=rho,
            past_plain=_as_matrix(self.past_plain),
            past_euler=_as_matrix(self.past_euler),
            stage_plain=_as_matrix(self.stage_plain),
            stage_euler=_as_matrix(self.stage_euler),
            **extra,
        )


def _as_matrix(arr: np.ndarray) -> Matrix:
    return tuple(tuple(float(v) for v in row) for row in arr)


def forward_euler() -> SspTableau:
    """SSPRK(1,1,1): a single forward-Euler step."""
    rows = _Rows(1, 1)
    rows.stage_euler[0, 0] = 1.0
    return rows.build("SSPRK(1,1,1)", order=1, rho=1.0)


def ssprk_s2(s: int) -> SspTableau:
    """Second-order ``s``-stage method with ``rho = s - 1``.

    ``y_i = E(y_{i-1})`` and ``u^{n+1} = u^n / s + (s - 1) / s E(y_s)``.
    """
    if s < 2:
        raise InvalidArgumentError("SSPRK(s,2) needs at least two stages")
    rows = _Rows(1, s)
    for r in range(s - 1):
        rows.stage_euler[r, r] = 1.0
    rows.past_plain[s - 1, 0] = 1.0 / s
    rows.stage_euler[s - 1, s - 1] = (s - 1) / s
    return rows.build(f"SSPRK(1,2,{s})", order=2, rho=float(s - 1))


def ssprk_n2_3(n: int) -> SspTableau:
    """Third-order method with ``n**2`` stages and ``rho = n**2 - n``.

    Euler chain with one convex recombination with the stage reached after
    ``(n - 1)(n - 2) / 2`` steps.
    """
    if n < 2:
        raise InvalidArgumentError("SSPRK(n^2,3) needs n >= 2")
    s = n * n
    saved = (n - 1) * (n - 2) // 2
    merge = n * (n + 1) // 2 - 1
    rows = _Rows(1, s)
    for r in range(s):
        # row r consumes the Euler step of stage r (0-based)
        if r == merge:
            rows.stage_plain[r, saved] = n / (2 * n - 1)
            rows.stage_euler[r, r] = (n - 1) / (2 * n - 1)
        else:
            rows.stage_euler[r, r] = 1.0
    return rows.build(f"SSPRK(1,3,{s})", order=3, rho=float(s - n))


def ssprk_10_4() -> SspTableau:
    """Ten-stage fourth-order method with ``rho = 6``."""
    rows = _Rows(1, 10)
    for r in range(4):
        rows.stage_euler[r, r] = 1.0
    rows.past_plain[4, 0] = 3.0 / 5.0
    rows.stage_euler[4, 4] = 2.0 / 5.0
    for r in range(5, 9):
        rows.stage_euler[r, r] = 1.0
    rows.past_plain[9, 0] = 1.0 / 25.0
    rows.stage_euler[9, 4] = 9.0 / 25.0
    rows.stage_euler[9, 9] = 3.0 / 5.0
    return rows.build("SSPRK(1,4,10)", order=4, rho=6.0)


def check_effective_cfl(tab: SspTableau) -> None:
    """Compare ``rho / s`` of a registered method with its published value.

    Raises:
        TableauError: If the effective CFL is off by more than
            :data:`CFL_TOLERANCE`, or the shape does not match the name.
    """
    expected = EFFECTIVE_CFL.get(tab.name)
    if expected is None:
        return
    shape = _MULTISTEP.get(tab.name)
    if shape is not None and (tab.steps, tab.order, tab.stages) != shape:
        raise TableauError(
            f"{tab.name} must have (steps, order, stages) = {shape}, got "
            f"({tab.steps}, {tab.order}, {tab.stages})"
        )
    if abs(tab.effective_cfl - expected) > CFL_TOLERANCE:
        raise TableauError(
            f"{tab.name} has effective CFL {tab.effective_cfl:.4f}, "
            f"expected {expected} +- {CFL_TOLERANCE}"
        )


def design_tableau(
    name: str,
    steps: int,
    order: int,
    stages: int,
    rho: float,
    *,
    seed: int = 0,
    restarts: int = 4,
) -> SspTableau:
    """Search a multistep method with ``rho`` inside the CFL tolerance.

    The optimal ``rho`` admits a single coefficient set, so the search starts
    a little below it and moves down. Every trial keeps ``rho / stages``
    within :data:`CFL_TOLERANCE` of the target.

    Raises:
        TableauError: If no design exists inside the window.
    """
    layout = MultistepLayout(steps=steps, stages=stages, euler_past=steps > 2)
    slack = CFL_TOLERANCE * stages
    for margin in _DESIGN_MARGINS:
        trial = rho - margin * slack
        logger.info("Designing %s at rho=%.4f", name, trial)
        found = design_coefficients(layout, order, trial, seed=seed, restarts=restarts)
        if found is None:
            continue
        rows = _Rows(steps, stages)
        rows.past_plain = np.maximum(found["past_plain"], 0.0)
        rows.past_euler = found["past_euler"]
        rows.stage_euler = found["stage_euler"]
        result = rows.build(name, order=order, rho=trial, target_rho=rho)
        result.check_certificate()
        return result
    raise TableauError(
        f"Could not design {name} of order {order} with rho within "
        f"{slack:.3g} of {rho:.4f}"
    )


def _slug(name: str) -> str:
    return re.sub(r"[^0-9a-z]+", "_", name.lower()).strip("_")


def export_tableau(tab: SspTableau, directory: str | Path) -> Path:
    """Write a tableau and its checksum as JSON.

    Returns:
        Path of the written file.
    """
    path = Path(directory) / f"{_slug(tab.name)}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"sha256": tab.checksum(), "tableau": tab.model_dump()}
    path.write_text(json.dumps(payload, indent=2))
    return path


def load_tableau(source: str | Path) -> SspTableau:
    """Read a tableau written by :func:`export_tableau` and re-check it.

    Raises:
        TableauError: If the file is malformed, its checksum does not match or
            the coefficients miss their order.
    """
    try:
        payload = json.loads(Path(source).read_text())
        tab = SspTableau.model_validate(payload["tableau"])
    except (OSError, KeyError, TypeError, json.JSONDecodeError, ValidationError) as e:
        raise TableauError(f"Cannot read tableau from {source}: {e}") from e
    if payload.get("sha256") != tab.checksum():
        raise TableauError(f"Checksum mismatch in {source}")
    tab.check_certificate()
    return tab


def _stored(name: str) -> SspTableau | None:
    """Coefficients shipped in the package data or kept in the override directory."""
    filename = f"{_slug(name)}.json"
    entry = resources.files("kinetic_moment_closure") / "data" / filename
    if entry.is_file():
        with resources.as_file(entry) as path:
            return load_tableau(path)
    directory = os.environ.get(TABLEAU_DIR_ENV)
    if directory:
        path = Path(directory) / filename
        if path.is_file():
            return load_tableau(path)
    return None


@cache
def tableau(name: str) -> SspTableau:
    """Look up a method by name.

    Closed-form methods are built directly. Multistep methods are read from
    the packaged data directory, then from the directory named by
    ``KINETIC_MOMENT_CLOSURE_TABLEAUX``; only when neither holds them are
    they designed, which takes minutes. Every result must reach its
    registered effective CFL.

    Raises:
        InvalidArgumentError: If the name is unknown.
        TableauError: If stored or designed coefficients miss their order or
            effective CFL.
    """
    key = name.replace(" ", "").upper()
    if key not in EFFECTIVE_CFL:
        raise InvalidArgumentError(
            f"Unknown integrator {name!r}; choose from {', '.join(TABLEAU_NAMES)}"
        )
    if key == "SSPRK(1,1,1)":
        tab = forward_euler()
    elif key == "SSPRK(1,2,20)":
        tab = ssprk_s2(20)
    elif key == "SSPRK(1,3,16)":
        tab = ssprk_n2_3(4)
    elif key == "SSPRK(1,4,10)":
        tab = ssprk_10_4()
    else:
        stored = _stored(key)
        if stored is not None and stored.name != key:
            raise TableauError(f"Stored coefficients for {key} are named {stored.name}")
        if stored is None:
            steps, order, stages = _MULTISTEP[key]
            logger.warning(
                "No stored coefficients for %s; designing them from the order conditions",
                key,
            )
            stored = design_tableau(key, steps, order, stages, EFFECTIVE_CFL[key] * stages)
        tab = stored
    check_effective_cfl(tab)
    return tab


class RhsEvaluator(Protocol):
    """Right-hand side that may replace its input by a nearby state."""

    def evaluate(self, t: float, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(u_eff, du)``; Euler steps are ``u_eff + h du``."""
        ...


@dataclass
class _CallableRhs:
    rhs: Callable[[float, np.ndarray], np.ndarray]

    def evaluate(self, t: float, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return u, np.asarray(self.rhs(t, u))


def as_evaluator(
    rhs: RhsEvaluator | Callable[[float, np.ndarray], np.ndarray],
) -> RhsEvaluator:
    """Wrap a plain ``rhs(t, u)`` callable into an evaluator."""
    if hasattr(rhs, "evaluate"):
        return rhs  # type: ignore[return-value]
    return _CallableRhs(rhs)  # type: ignore[arg-type]


def euler_step(
    state: np.ndarray,
    rhs: RhsEvaluator | Callable[[float, np.ndarray], np.ndarray],
    dt: float,
    t: float = 0.0,
) -> np.ndarray:
    """One forward-Euler step ``u_eff + dt L(u)``."""
    effective, du = as_evaluator(rhs).evaluate(t, state)
    return effective + dt * du


@dataclass
class HistoryEntry:
    """A past solution value and, once evaluated, its right-hand side."""

    t: float
    state: np.ndarray
    effective: np.ndarray | None = None
    derivative: np.ndarray | None = None

    def euler(self, evaluator: RhsEvaluator, h: float) -> np.ndarray:
        """``E(state)`` with step ``h``, evaluating the right-hand side once."""
        if self.derivative is None:
            self.effective, self.derivative = evaluator.evaluate(self.t, self.state)
        assert self.effective is not None
        return self.effective + h * self.derivative


class StepHistory:
    """Past solution values keyed by time."""

    def __init__(self) -> None:
        """Create an empty history."""
        self._entries: list[HistoryEntry] = []

    def __len__(self) -> int:
        """Number of stored values."""
        return len(self._entries)

    @property
    def latest(self) -> HistoryEntry:
        """Most recent value."""
        if not self._entries:
            raise NeedsStartupError("History is empty")
        return self._entries[-1]

    @property
    def entries(self) -> tuple[HistoryEntry, ...]:
        """Stored values, oldest first."""
        return tuple(self._entries)

    @property
    def times(self) -> tuple[float, ...]:
        """Times of the stored values."""
        return tuple(e.t for e in self._entries)

    def push(self, t: float, state: np.ndarray) -> HistoryEntry:
        """Append a value; times must increase."""
        if self._entries and t <= self._entries[-1].t:
            raise InvalidArgumentError("History times must increase")
        entry = HistoryEntry(t=t, state=state)
        self._entries.append(entry)
        return entry

    def window(self, delta: float, steps: int) -> list[HistoryEntry]:
        """Values at ``t_n, t_n - delta, ..., t_n - (steps - 1) delta``.

        Raises:
            NeedsStartupError: If one of them is missing.
        """
        t_n = self.latest.t
        tol = 1e-9 * delta + 1e-12 * abs(t_n)
        found = []
        for lag in range(steps):
            wanted = t_n - lag * delta
            match = next((e for e in self._entries if abs(e.t - wanted) <= tol), None)
            if match is None:
                raise NeedsStartupError(
                    f"No stored value at t={wanted:.6g} for a {steps}-step method"
                )
            found.append(match)
        return found

    def prune(self, before: float) -> None:
        """Drop values older than ``before``, keeping at least the latest."""
        keep = [e for e in self._entries[:-1] if e.t >= before]
        self._entries = [*keep, self._entries[-1]]


def ssp_step(
    tab: SspTableau,
    history: StepHistory,
    rhs: RhsEvaluator | Callable[[float, np.ndarray], np.ndarray],
    dt: float,
    *,
    monitor: Callable[[float], None] | None = None,
) -> np.ndarray:
    """Advance the latest history value by ``dt``.

    Args:
        tab: Method to apply.
        history: Must hold the values ``u^{n-l}`` spaced by ``dt``.
        rhs: Right-hand side.
        dt: Step size.
        monitor: Called with the size of every Euler step taken.

    Returns:
        ``u^{n+1}``. The caller pushes it onto the history.

    Raises:
        NeedsStartupError: If the history is too short.
    """
    evaluator = as_evaluator(rhs)
    window = history.window(dt, tab.steps)
    a = tab.arrays
    h = dt / tab.rho
    t_n = window[0].t
    c = tab.abscissae
    stages: list[np.ndarray] = [window[0].state]
    steps: dict[int, np.ndarray] = {}

    def stage_euler(j: int) -> np.ndarray:
        if j not in steps:
            if monitor is not None:
                monitor(h)
            if j == 0:
                steps[j] = window[0].euler(evaluator, h)
            else:
                effective, du = evaluator.evaluate(t_n + c[j] * dt, stages[j])
                steps[j] = effective + h * du
        return steps[j]

    def past_euler(lag: int) -> np.ndarray:
        if lag == 0:
            return stage_euler(0)
        if monitor is not None:
            monitor(h)
        return window[lag].euler(evaluator, h)

    value = stages[0]
    for r in range(tab.stages):
        terms: list[np.ndarray] = []
        for lag in range(tab.steps):
            if a["past_plain"][r, lag]:
                terms.append(a["past_plain"][r, lag] * window[lag].state)
            if a["past_euler"][r, lag]:
                terms.append(a["past_euler"][r, lag] * past_euler(lag))
        for j in range(r + 1):
            if a["stage_plain"][r, j]:
                terms.append(a["stage_plain"][r, j] * stages[j])
            if a["stage_euler"][r, j]:
                terms.append(a["stage_euler"][r, j] * stage_euler(j))
        value = np.sum(terms, axis=0)
        if r < tab.stages - 1:
            stages.append(value)
    return value


@dataclass
class StartupResult:
    """History produced by :func:`startup` and the substeps that built it."""

    history: StepHistory
    substeps: list[float] = field(default_factory=list)


def startup(
    tab: SspTableau,
    u0: np.ndarray,
    rhs: RhsEvaluator | Callable[[float, np.ndarray], np.ndarray],
    dt: float,
    q: int = 2,
    *,
    t0: float = 0.0,
    t_end: float | None = None,
    monitor: Callable[[float], None] | None = None,
    helper: SspTableau | None = None,
) -> StartupResult:
    """Build the history a multistep method needs before its first step.

    One SSPRK(1,4,10) step of size ``dt / 2**q`` is followed by two-step
    steps that double in size, reusing ``u(t0)``, until the step reaches
    ``dt`` or the largest power-of-two fraction of ``dt`` that keeps the
    Euler steps within those of ``tab``. Constant steps of that size then
    fill the history up to ``t0 + (m - 1) dt``. Five-step methods use
    TSRK(2,7,12) for these steps.

    Args:
        tab: Method the history is for.
        u0: Initial value at ``t0``.
        rhs: Right-hand side.
        dt: Step size of ``tab``.
        q: Exponent of the first substep.
        t0: Initial time.
        t_end: Stop early at this time.
        monitor: Passed to every :func:`ssp_step`.
        helper: Two-step method for the doubling steps of methods with more
            than two steps; TSRK(2,7,12) when omitted.

    Returns:
        The history and the list of substep sizes.
    """
    if q < 0:
        raise InvalidArgumentError("Startup exponent must be nonnegative")
    evaluator = as_evaluator(rhs)
    history = StepHistory()
    history.push(t0, u0)
    result = StartupResult(history=history)
    horizon = t0 + (tab.steps - 1) * dt
    if t_end is not None:
        horizon = min(horizon, t_end)
    if tab.steps == 1 or horizon <= t0:
        return result
    if tab.steps == 2:
        helper = tab
    elif helper is None:
        helper = tableau(MSRK_STARTUP_TABLEAU)
    elif helper.steps != 2:
        raise InvalidArgumentError("Startup helper must be a two-step method")
    ratio = min(1.0, helper.rho / tab.rho)
    cap = dt * 2.0 ** math.floor(math.log2(ratio))
    first = min(dt / 2**q, cap, horizon - t0)
    tol = 1e-12 * max(1.0, abs(horizon))

    u = ssp_step(tableau(STARTUP_TABLEAU), history, evaluator, first, monitor=monitor)
    history.push(t0 + first, u)
    result.substeps.append(first)
    while history.latest.t < horizon - tol:
        t = history.latest.t
        size = min(t - t0, cap, horizon - t)
        try:
            u = ssp_step(helper, history, evaluator, size, monitor=monitor)
        except NeedsStartupError:
            # a final partial step has no past value at t - size
            u = ssp_step(
                tableau(STARTUP_TABLEAU), history, evaluator, size, monitor=monitor
            )
        history.push(t + size, u)
        result.substeps.append(size)
    logger.debug("Startup substeps: %s", result.substeps)
    return result


class Integrator:
    """Drive a method from an initial value through startup and main steps."""

    def __init__(
        self,
        tab: SspTableau,
        rhs: RhsEvaluator | Callable[[float, np.ndarray], np.ndarray],
        dt: float,
        *,
        q_init: int = 2,
        monitor: Callable[[float], None] | None = None,
    ):
        """Configure the integrator.

        Args:
            tab: Method for the main steps.
            rhs: Right-hand side.
            dt: Main step size.
            q_init: Exponent of the first startup substep.
            monitor: Receives the size of every Euler step.
        """
        if dt <= 0.0:
            raise InvalidArgumentError("Time step must be positive")
        self.tableau = tab
        self.evaluator = as_evaluator(rhs)
        self.dt = dt
        self.q_init = q_init
        self.monitor = monitor
        self.substeps: list[float] = []
        self.n_steps = 0

    def run(
        self,
        u0: np.ndarray,
        n_steps: int,
        *,
        t0: float = 0.0,
        callback: Callable[[int, float, np.ndarray], None] | None = None,
    ) -> np.ndarray:
        """Advance ``u0`` by ``n_steps`` steps of size ``dt``.

        Args:
            u0: Initial value.
            n_steps: Number of main-step intervals to cover.
            t0: Initial time.
            callback: Called as ``callback(step, t, u)`` at every multiple of
                ``dt``, startup values included.

        Returns:
            The value at ``t0 + n_steps * dt``.
        """
        t_end = t0 + n_steps * self.dt
        begun = startup(
            self.tableau,
            u0,
            self.evaluator,
            self.dt,
            self.q_init,
            t0=t0,
            t_end=t_end,
            monitor=self.monitor,
        )
        history = begun.history
        self.substeps = begun.substeps
        done = 0
        for entry in history.entries[1:]:
            step = round((entry.t - t0) / self.dt)
            if abs(entry.t - (t0 + step * self.dt)) <= 1e-9 * self.dt:
                done = step
                if callback is not None:
                    callback(step, entry.t, entry.state)
        keep = (self.tableau.steps - 1) * self.dt
        while done < n_steps:
            u = ssp_step(
                self.tableau, history, self.evaluator, self.dt, monitor=self.monitor
            )
            done += 1
            t = t0 + done * self.dt
            history.push(t, u)
            history.prune(t - keep - 1e-9 * self.dt)
            if callback is not None:
                callback(done, t, u)
        self.n_steps = done
        return history.latest.state

