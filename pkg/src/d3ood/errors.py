"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class D3Error(Exception):
    """Base class for all package errors."""


class UsageError(D3Error):
    """Bad command-line usage or inconsistent run configuration."""


class DataError(D3Error):
    """Malformed files, dimension mismatches, unresolvable manifests."""


class DegenerateInputError(DataError):
    """Inputs that indicate an upstream pipeline fault (e.g. zero-norm features)."""


class CalibrationError(DataError):
    """Missing or insufficient calibration data for a detector."""


class NumericalError(D3Error):
    """Non-finite values where the pipeline cannot continue (training divergence,
    non-finite scores)."""
