"""Command-line interface: single runs, convergence studies, references, tableaux.

Every subcommand builds a :class:`~kinetic_moment_closure.config.RunConfig`
from an optional JSON file and the flags, runs, and writes CSV with 17
significant digits plus a JSON sidecar of diagnostics.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, TextIO

import numpy as np
from pydantic import ValidationError

from .config import RunConfig, load_run_config
from .errors import (
    ConfigError,
    InvalidArgumentError,
    OptimizerFailure,
    RealizabilityError,
    TableauError,
)
from .problems import (
    ConvergenceStudy,
    convergence_study,
    efficiency_rows,
    make_problem,
    pn_reference,
)
from .solver import RunResult, run, sample_cells
from .time_integration import TABLEAU_NAMES, export_tableau, tableau

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

_FMT = "%.17g"

# (moment order, cells) of the P_N references, desk scale first
_REFERENCE_RESOLUTION = {
    "plane_source": ((31, 400), (199, 4000)),
    "source_beam": ((31, 500), (99, 2000)),
    "manufactured": ((31, 400), (99, 2000)),
}

# flags forwarded to RunConfig; dest -> config key
_CONFIG_FLAGS = (
    "problem",
    "model",
    "N",
    "k",
    "J",
    "integrator",
    "limiter",
    "c",
    "tau",
    "eps",
    "r_sequence",
    "k_r",
    "n_q",
    "q_init",
    "t_final",
    "K",
    "threads",
    "output",
    "grids",
    "points_per_cell",
    "save_every",
    "long_reference",
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Flags shared by the subcommands that run the solver."""
    parser.add_argument("--config", type=Path, help="JSON file with flat keys")
    parser.add_argument(
        "--problem", choices=["manufactured", "plane_source", "source_beam"]
    )
    parser.add_argument("--model", choices=["mN", "pN"])
    parser.add_argument("--N", type=int, help="Moment order")
    parser.add_argument("--k", type=int, help="Spatial reconstruction order")
    parser.add_argument("--J", type=int, help="Number of cells")
    parser.add_argument("--integrator", help=f"One of {', '.join(TABLEAU_NAMES)}")
    parser.add_argument("--limiter", choices=["off", "pp", "mp"])
    parser.add_argument("--c", type=float, help="Bound on |d_x psi / psi|")
    parser.add_argument("--tau", type=float, help="Gradient tolerance")
    parser.add_argument("--eps", type=float, help="Tolerance on 1 - G/psi_bar")
    parser.add_argument(
        "--r-sequence", dest="r_sequence", help="Regularization levels, e.g. 1e-8,1e-6"
    )
    parser.add_argument("--k-r", dest="k_r", type=int, help="Newton iterations per level")
    parser.add_argument("--nq", dest="n_q", type=int, help="Angular node count")
    parser.add_argument("--q-init", dest="q_init", type=int)
    parser.add_argument("--t-final", dest="t_final", type=float)
    parser.add_argument("--K", type=float, help="Peaking of the manufactured solution")
    parser.add_argument("--threads", type=int, help="Optimizer threads, 0 = auto")
    parser.add_argument("--out", dest="output", help="Output CSV path")
    parser.add_argument("--points-per-cell", dest="points_per_cell", type=int)
    parser.add_argument("--save-every", dest="save_every", type=int)


def build_parser() -> argparse.ArgumentParser:
    """Parser with the ``solve``, ``converge``, ``reference`` and ``tableau`` commands."""
    parser = argparse.ArgumentParser(
        prog="kinetic-moment-closure",
        description="High-order realizability-preserving M_N solver for slab transport.",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Run one simulation")
    _add_config_flags(solve)

    converge = commands.add_parser(
        "converge", help="Convergence study of the manufactured problem"
    )
    _add_config_flags(converge)
    converge.add_argument("--grids", help="Cell counts, e.g. 10,20,40")

    reference = commands.add_parser("reference", help="First-order P_N reference")
    _add_config_flags(reference)
    reference.add_argument("--pn", type=int, help="Odd P_N order")
    reference.add_argument(
        "--long",
        dest="long_reference",
        action="store_true",
        default=None,
        help="Use the full reference resolution",
    )

    tab = commands.add_parser("tableau", help="Inspect or export integrators")
    actions = tab.add_subparsers(dest="action", required=True)
    show = actions.add_parser("show", help="Print rho, stages and effective CFL")
    show.add_argument("name", choices=TABLEAU_NAMES)
    export = actions.add_parser("export", help="Write a coefficient file")
    export.add_argument("name", choices=TABLEAU_NAMES)
    export.add_argument("--out", dest="directory", type=Path, default=Path("."))
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Merge the JSON file named by ``--config`` with the given flags.

    Raises:
        ConfigError: If the file cannot be read.
        pydantic.ValidationError: If a value is invalid.
    """
    overrides = {
        key: getattr(args, key) for key in _CONFIG_FLAGS if hasattr(args, key)
    }
    return load_run_config(getattr(args, "config", None), overrides)


def _sample_offsets(points_per_cell: int | None) -> np.ndarray:
    """Reference abscissae per cell; edges and center by default."""
    if points_per_cell is None:
        return np.array([-0.5, 0.0, 0.5])
    if points_per_cell == 1:
        return np.array([0.0])
    return np.linspace(-0.5, 0.5, points_per_cell)


def profile_table(result: RunResult, points_per_cell: int | None = None) -> np.ndarray:
    """Rows ``x, u_0 .. u_N`` of the final reconstruction."""
    state = result.state
    xi = _sample_offsets(points_per_cell)
    moments = sample_cells(state, xi)  # (J, P, N + 1)
    x = state.mesh.centers[:, None] + state.mesh.dx * xi[None, :]
    return np.column_stack([x.reshape(-1), moments.reshape(-1, moments.shape[-1])])


def _write_table(
    table: np.ndarray, header: Sequence[str], target: str | Path | TextIO
) -> None:
    np.savetxt(target, table, fmt=_FMT, delimiter=",", header=",".join(header), comments="")


def _fmt(value: float | None) -> str:
    return "---" if value is None else _FMT % value


def convergence_table(study: ConvergenceStudy) -> np.ndarray:
    """Formatted rows ``J, E1, nu1, Einf, nuinf, wall_time``."""
    return np.array(
        [
            [
                str(row.n_cells),
                _fmt(row.e1),
                _fmt(row.order_e1),
                _fmt(row.einf),
                _fmt(row.order_einf),
                _fmt(row.wall_time),
            ]
            for row in study.rows
        ],
        dtype=str,
    )


def run_sidecar(result: RunResult) -> dict[str, Any]:
    """Diagnostics of one run as a JSON-ready mapping."""
    diag = result.diagnostics
    return {
        "config": result.config.model_dump(mode="json", by_alias=True),
        "dt": result.dt,
        "n_steps": result.n_steps,
        "startup_substeps": list(result.substeps),
        "t_final": result.state.t,
        "wall_time": result.wall_time,
        "evaluations": diag.n_evaluations,
        "regularized_closures": diag.n_regularized,
        "mean_newton_iterations": diag.mean_newton_iterations,
        "limited": diag.n_limited,
        "min_theta": diag.min_theta,
        "means_out_of_bounds": diag.n_mean_out_of_bounds,
    }


def _write_sidecar(output: str | None, payload: dict[str, Any]) -> None:
    if output is None:
        return
    path = Path(output).with_suffix(".json")
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote %s", path)


def _target(output: str | None) -> str | TextIO:
    if output is None:
        return sys.stdout
    Path(output).parent.mkdir(parents=True, exist_ok=True)
    return output


def cmd_solve(cfg: RunConfig) -> int:
    """Run one simulation and write its profile."""
    problem = make_problem(cfg)
    result = run(problem, cfg)
    header = ["x", *(f"u_{i}" for i in range(cfg.n_moments + 1))]
    _write_table(profile_table(result, cfg.points_per_cell), header, _target(cfg.output))
    _write_sidecar(cfg.output, run_sidecar(result))
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    """Run the convergence study and write its table."""
    study = convergence_study(cfg)
    header = ["J", "E1", "nu1", "Einf", "nuinf", "wall_time"]
    np.savetxt(
        _target(cfg.output),
        convergence_table(study),
        fmt="%s",
        delimiter=",",
        header=",".join(header),
        comments="",
    )
    _write_sidecar(
        cfg.output,
        {
            "config": cfg.model_dump(mode="json", by_alias=True),
            "efficiency": efficiency_rows(study),
            "runs": [run_sidecar(result) for result in study.results],
        },
    )
    return EXIT_OK


def cmd_reference(cfg: RunConfig, n_pn: int | None) -> int:
    """Compute a first-order P_N reference profile."""
    desk, full = _REFERENCE_RESOLUTION[cfg.problem]
    order, n_cells = full if cfg.long_reference else desk
    if n_pn is not None:
        order = n_pn
    if "n_cells" in cfg.model_fields_set:
        n_cells = cfg.n_cells
    problem = make_problem(cfg)
    logger.info("P_%d reference of %s on %d cells", order, problem.name, n_cells)
    x, w0 = pn_reference(problem, order, n_cells, t_final=cfg.t_final)
    _write_table(np.column_stack([x, w0]), ["x", "u_0"], _target(cfg.output))
    return EXIT_OK


def cmd_tableau(action: str, name: str, directory: Path | None = None) -> int:
    """Show or export an integrator."""
    tab = tableau(name)
    if action == "export":
        path = export_tableau(tab, directory or Path("."))
        print(path)
        return EXIT_OK
    target = "" if tab.target_rho is None else f" (designed for {tab.target_rho:.4f})"
    print(
        f"{tab.name}: order {tab.order}, steps {tab.steps}, stages {tab.stages}, "
        f"rho {tab.rho:.4f}{target}, effective CFL {tab.effective_cfl:.4f}"
    )
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``kinetic-moment-closure`` command.

    Returns:
        0 on success, 1 for configuration errors, 2 for numerical failures.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        if args.command == "tableau":
            return cmd_tableau(args.action, args.name, getattr(args, "directory", None))
        cfg = config_from_args(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "converge":
            return cmd_converge(cfg)
        return cmd_reference(cfg, args.pn)
    except (ConfigError, ValidationError, InvalidArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RealizabilityError, OptimizerFailure, TableauError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
