"""Exception hierarchy.

Two branches matter for the CLI exit codes: ``DataError`` (bad input data,
exit 3) and ``SolverError`` (numerical/optimization failures, exit 4).
"""


class FetrError(Exception):
    """Base class for all library errors."""


class DataError(FetrError):
    """Problems with input data, manifests or splits."""


class DataValidationError(DataError):
    """Dataset violates a structural invariant (dimensions, emptiness)."""


class ManifestError(DataError):
    """Malformed or inconsistent dataset manifest."""


class CsvParseError(DataError):
    """Unparseable CSV content; message carries file and line context."""


class SplitError(DataError):
    """Cross-validation split cannot be formed."""


class DegenerateMetricError(DataError):
    """Metric undefined for the given targets (e.g. NMSE with zero variance)."""


class SolverError(FetrError):
    """Problems inside a solver."""


class CapacityError(SolverError):
    """Problem size exceeds a solver's configured guard."""


class UnsupportedShapeError(SolverError):
    """Solver requires shared instances (or otherwise unsupported layout)."""


class SingularMatrixError(SolverError):
    """A matrix that must be inverted is (numerically) singular."""


class DivergenceError(SolverError):
    """Iteration produced non-finite values; step-size contract violated."""


class NumericError(SolverError):
    """Non-finite input or failed numerical postcondition."""


class DomainError(SolverError):
    """Argument outside a function's mathematical domain (e.g. non-PD matrix)."""


class InternalConsistencyError(SolverError):
    """An internal invariant failed; indicates a bug, fail loudly."""
