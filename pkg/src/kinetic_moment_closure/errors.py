"""Exception hierarchy for the moment-closure solver."""

from collections.abc import Sequence


class KineticClosureError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(KineticClosureError, ValueError):
    """A precondition on an argument was violated."""


class DegenerateMomentError(InvalidArgumentError):
    """A moment vector has a non-positive zeroth component."""


class UndefinedOrderError(InvalidArgumentError):
    """An observed convergence order cannot be computed from the given errors."""


class ConfigError(InvalidArgumentError):
    """A run configuration is inconsistent or could not be loaded."""


class UnsupportedProblemError(InvalidArgumentError):
    """The requested operation is not available for the selected problem."""


class InvalidStateError(KineticClosureError, RuntimeError):
    """An internal invariant was broken upstream of the current operation."""


class NeedsStartupError(KineticClosureError, RuntimeError):
    """A multi-step method was asked to step without enough history."""


class AnsatzOverflowError(KineticClosureError, FloatingPointError):
    """An exponent of the entropy ansatz exceeded the overflow guard."""


class OptimizerFailure(KineticClosureError):
    """The dual Newton solve did not produce an acceptable iterate.

    These failures are recoverable: the caller retries on regularized moments.
    """


class CholeskyFailure(OptimizerFailure):
    """The dual Hessian could not be factorized."""


class NotConvergedError(OptimizerFailure):
    """The iteration budget was exhausted before the stopping criteria held."""


class RealizabilityError(KineticClosureError, RuntimeError):
    """Moments could not be closed even at the largest regularization level.

    Attributes:
        cells: Indices of the cells that failed.
        time: Simulation time at which the failure happened, if known.
        stage: Stage counter of the integrator, if known.
    """

    def __init__(
        self,
        message: str,
        cells: Sequence[int] = (),
        time: float | None = None,
        stage: int | None = None,
    ):
        """Initialize the error with its diagnostics.

        Args:
            message: Human readable description.
            cells: Indices of the failing cells.
            time: Simulation time of the failure.
            stage: Integrator stage counter.
        """
        self.cells = tuple(int(c) for c in cells)
        self.time = time
        self.stage = stage
        details = []
        if self.cells:
            shown = ", ".join(str(c) for c in self.cells[:10])
            more = "" if len(self.cells) <= 10 else f" (+{len(self.cells) - 10} more)"
            details.append(f"cells [{shown}]{more}")
        if time is not None:
            details.append(f"t={time:.6g}")
        if stage is not None:
            details.append(f"stage {stage}")
        suffix = f" ({'; '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class TableauError(KineticClosureError):
    """A time-integration tableau is malformed, corrupted or could not be built."""
