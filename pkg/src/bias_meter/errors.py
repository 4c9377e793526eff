"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so compute code should raise
DataError for problems with input files/shapes and NumericalError for
divergence or degenerate fits.
"""


class BiasMeterError(Exception):
    """Base class for all package-specific errors."""


class DataError(BiasMeterError):
    """Malformed, truncated, or inconsistent input data."""


class NumericalError(BiasMeterError):
    """Numerical failure: divergence, singular solve, degenerate fit."""
