"""Exception hierarchy shared by the whole package.

Two branches matter to callers: ValidationError for bad inputs or schema
violations (CLI exit code 2) and NumericalError for solver/convergence
failures on valid inputs (CLI exit code 3).
"""


class PredPcaError(Exception):
    """Base class for all package errors."""


class ValidationError(PredPcaError):
    """Invalid input data, schema mismatch, or violated precondition."""


class NumericalError(PredPcaError):
    """A numerical routine failed: non-convergence, degeneracy, singularity."""
