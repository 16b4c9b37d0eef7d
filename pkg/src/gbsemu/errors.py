"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: validation errors exit 2,
resource-guard refusals exit 3, numerical failures exit 4.
"""


class GbsError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(GbsError):
    """Bad user input: shapes, ranges, unphysical parameters, file formats."""

    exit_code = 2


class ResourceGuardError(GbsError):
    """Operation refused because it would exceed a configured budget."""

    exit_code = 3


class NumericalError(GbsError):
    """A computation produced values outside its certified range."""

    exit_code = 4
