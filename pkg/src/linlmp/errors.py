"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage errors exit 1,
data errors (parse/validation) exit 2, numerical failures exit 3.
"""


class LinLmpError(Exception):
    """Base class for all package errors."""


class CaseParseError(LinLmpError):
    """Malformed case text. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NetworkValidationError(LinLmpError):
    """Structurally invalid network (dangling ids, no reference bus, ...)."""


class SingularSensitivityError(LinLmpError):
    """The reduced sensitivity matrix is numerically singular.

    Typically the network carries no shunt susceptance anywhere, which
    makes the reactive rows linearly dependent.
    """


class QpError(LinLmpError):
    """Base class for QP solver failures."""


class QpInfeasibleError(QpError):
    """No feasible point exists. ``certificate`` is a multiplier vector
    over (equalities, range-lo, range-hi) rows whose nonnegative
    combination of the constraints is contradictory."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class QpUnboundedError(QpError):
    """The objective decreases without bound over the feasible set."""


class QpIterationLimitError(QpError):
    """Active-set loop hit its iteration cap. Carries the best residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(LinLmpError):
    """Iterative procedure failed to converge. Carries a trace when available."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DualConsistencyError(LinLmpError):
    """Recovered multipliers violate the stationarity identity (sign bug guard)."""
