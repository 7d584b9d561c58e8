"""Validated configuration models.

All models are frozen pydantic models so that a configuration can be shared
between threads and serialized next to the results it produced.
"""

from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ._config_utils import merge_overrides, normalize_keys, read_flat_json
from ._validators import (
    create_ascending_sequence_validator,
    create_even_integer_validator,
    create_grid_list_validator,
)

RegularizationSequence = create_ascending_sequence_validator(0.0, 1.0)
EvenNodeCount = create_even_integer_validator(4)
GridList = create_grid_list_validator()

ProblemName = Literal["manufactured", "plane_source", "source_beam"]
LimiterMode = Literal["off", "positivity", "max_principle"]

# short CLI spellings of the limiter modes
_LIMITER_FLAGS: dict[str, LimiterMode] = {
    "off": "off",
    "pp": "positivity",
    "mp": "max_principle",
}

# integrator matching each spatial order
_INTEGRATOR_FOR_ORDER = {
    1: "SSPRK(1,1,1)",
    2: "SSPRK(1,2,20)",
    3: "SSPRK(1,3,16)",
    4: "SSPRK(1,4,10)",
    5: "TSRK(2,5,8)",
    6: "TSRK(2,6,12)",
    7: "MSRK(5,7,12)",
}


class OptimizerConfig(BaseModel):
    """Parameters of the dual Newton solver and its regularization loop."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tau: float = Field(1e-9, gt=0.0, description="Gradient tolerance")
    eps: float = Field(
        0.01, gt=0.0, lt=1.0, description="Tolerance on 1 - G/psi_bar"
    )
    r_sequence: RegularizationSequence = (1e-8, 1e-6, 1e-4)
    k_r: int = Field(50, ge=1, description="Newton iterations per level")
    max_line_search: int = Field(40, ge=1)
    chi: float = Field(1e-4, gt=0.0, lt=1.0, description="Armijo slope fraction")

    @property
    def max_iterations(self) -> int:
        """Iteration cap over the warm start, the isotropic restart and all levels."""
        return (len(self.r_sequence) + 2) * self.k_r


class WenoConfig(BaseModel):
    """Parameters of the WENO reconstruction."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(2, ge=1, le=7, description="Reconstruction order")
    epsilon: float = Field(1e-6, gt=0.0)
    power_p: float = Field(2.0, gt=0.0)


class LimiterConfig(BaseModel):
    """Parameters of the linear scaling limiter."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: LimiterMode = "max_principle"
    c: float = Field(1.0, gt=0.0, description="Bound on |d_x psi / psi|")

    def effective_c(self, dx: float) -> float:
        """The derivative bound capped at ``2 / dx``."""
        return min(self.c, 2.0 / dx)


class RunConfig(BaseModel):
    """Complete description of one simulation or convergence study."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    problem: ProblemName = "manufactured"
    model: Literal["mN", "pN"] = "mN"
    n_moments: int = Field(3, ge=1, alias="N")
    k: int = Field(2, ge=1, le=7)
    integrator: str = "auto"
    n_cells: int = Field(40, ge=2, alias="J")
    c: float = Field(1.0, gt=0.0)
    limiter: LimiterMode = "max_principle"
    tau: float = Field(1e-9, gt=0.0)
    eps: float = Field(0.01, gt=0.0, lt=1.0)
    r_sequence: RegularizationSequence = (1e-8, 1e-6, 1e-4)
    k_r: int = Field(50, ge=1)
    n_q: EvenNodeCount = 40
    q_init: int | None = Field(None, ge=1)
    t_final: float | None = Field(None, ge=0.0)
    peaking: float = Field(4.0, gt=1.0, alias="K")
    threads: int = Field(1, ge=0)
    output: str | None = None
    grids: GridList = (10, 20, 40)
    points_per_cell: int | None = Field(None, ge=1)
    save_every: int = Field(0, ge=0)
    long_reference: bool = False

    @model_validator(mode="before")
    @classmethod
    def _expand_flag_spellings(cls, data: Any) -> Any:
        """Accept the short limiter spellings and ``auto`` placeholders."""
        if isinstance(data, dict):
            data = dict(data)
            limiter = data.get("limiter")
            if isinstance(limiter, str) and limiter in _LIMITER_FLAGS:
                data["limiter"] = _LIMITER_FLAGS[limiter]
            integrator = data.get("integrator")
            if isinstance(integrator, str):
                data["integrator"] = integrator.replace(" ", "").upper() or "AUTO"
                if data["integrator"] == "AUTO":
                    data["integrator"] = "auto"
        return data

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        """Cross-field checks that single field constraints cannot express."""
        if self.model == "pN":
            if self.k != 1:
                raise ValueError("The P_N model runs first order only (k = 1)")
            if self.n_q < 2 * (self.n_moments + 2):
                raise ValueError(
                    f"The P_N model needs nq >= {2 * (self.n_moments + 2)}, "
                    f"got {self.n_q}"
                )
        if self.problem == "plane_source" and self.n_cells % 2 != 0:
            raise ValueError("The plane source needs an even cell count")
        if self.integrator != "auto":
            from .time_integration import TABLEAU_NAMES

            if self.integrator not in TABLEAU_NAMES:
                raise ValueError(
                    f"Unknown integrator {self.integrator!r}; "
                    f"choose from {', '.join(TABLEAU_NAMES)}"
                )
        return self

    def resolved_integrator(self) -> str:
        """Name of the time integrator, chosen from ``k`` when ``auto``."""
        if self.integrator != "auto":
            return self.integrator
        return _INTEGRATOR_FOR_ORDER[self.k]

    def resolved_startup_exponent(self) -> int:
        """Exponent ``q`` of the first startup substep ``dt / 2**q``."""
        if self.q_init is not None:
            return self.q_init
        return 3 if self.k >= 6 else 2

    def optimizer_config(self) -> OptimizerConfig:
        """Optimizer parameters of this run."""
        return OptimizerConfig(
            tau=self.tau, eps=self.eps, r_sequence=self.r_sequence, k_r=self.k_r
        )

    def weno_config(self) -> WenoConfig:
        """Reconstruction parameters of this run."""
        return WenoConfig(k=self.k)

    def limiter_config(self) -> LimiterConfig:
        """Limiter parameters of this run; ``pN`` runs never limit."""
        mode: LimiterMode = "off" if self.model == "pN" else self.limiter
        return LimiterConfig(mode=mode, c=self.c)

    def to_json(self) -> str:
        """Serialize with the flag-style aliases."""
        return self.model_dump_json(by_alias=True, indent=2)


def load_run_config(
    path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Build a run configuration from a JSON file and flag overrides.

    Keys may use flag spelling (``t-final``, ``nq``) or field spelling
    (``t_final``, ``n_q``). Overrides that are ``None`` are ignored, all others
    win over the file.

    Args:
        path: Optional JSON file with a flat object.
        overrides: Values given on the command line.

    Returns:
        The validated configuration.

    Raises:
        ConfigError: If the file cannot be read.
        pydantic.ValidationError: If a value is invalid.

    Example:
        >>> cfg = load_run_config(overrides={"problem": "plane_source", "J": 100})
        >>> cfg.n_cells
        100
    """
    base = normalize_keys(read_flat_json(path)) if path is not None else {}
    merged = merge_overrides(base, normalize_keys(overrides or {}))
    return RunConfig.model_validate(merged)
