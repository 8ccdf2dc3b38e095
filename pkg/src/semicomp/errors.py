"""Exception hierarchy.

Usage and validation problems derive from :class:`UsageError`; problems that
make an estimate statistically infeasible (positivity, truncation) derive from
:class:`InfeasibleError`. The CLI maps the two families to exit codes 2 and 3.
"""


class SemicompError(Exception):
    """Base class for all package errors."""


class UsageError(SemicompError, ValueError):
    pass


class SchemaError(UsageError):
    """A required column is missing from an input file."""


class ValidationError(UsageError):
    """Input data violates a record invariant."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ConfigurationError(UsageError):
    """Invalid simulation or estimation settings."""


class DesignError(UsageError):
    """Design matrix is rank deficient."""


class InfeasibleError(SemicompError, RuntimeError):
    pass


class PositivityError(InfeasibleError):
    """Fitted probabilities or cells violate positivity."""


class TruncationError(InfeasibleError):
    """An estimate is requested beyond the last time with at-risk mass."""


class DegenerateTestError(InfeasibleError):
    """A hypothesis test has no information (e.g. no events in one arm)."""
