"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors -> 1,
DataError -> 2, NumericalError -> 3.
"""


class HdgeeError(Exception):
    """Base class for all package errors."""


class DataError(HdgeeError):
    """Malformed or inconsistent input data (parsing, schema, dimensions)."""


class NumericalError(HdgeeError):
    """A numerical procedure failed (singularity, non-convergence, ...)."""


class DegenerateDirectionError(NumericalError):
    """The constrained l1 problem returned a zero direction.

    The normalization omega / (omega' S omega) is undefined at zero; this
    typically means the feasibility slack was chosen too large.
    """


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""
