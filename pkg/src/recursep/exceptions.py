"""Exception hierarchy.

Input problems (bad files, bad arguments, inconsistent histories) derive from
:class:`InputError`; numerical problems (degenerate variance, non-convergence,
undefined estimands) derive from :class:`NumericalError`. The command line maps
the two families to different exit codes.
"""


class RecurSepError(Exception):
    """Base class for all errors raised by this package."""


class InputError(RecurSepError, ValueError):
    """Invalid user input: arguments, configuration, or data."""


class DataIntegrityError(InputError):
    """A subject history violates the data model (e.g. events after death)."""

    def __init__(self, message, subject_ids=()):
        super().__init__(message)
        self.subject_ids = tuple(subject_ids)


class NumericalError(RecurSepError, ArithmeticError):
    """A quantity could not be computed from otherwise valid data."""


class ConvergenceError(NumericalError):
    """An iterative fit did not converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateVarianceError(NumericalError):
    """The estimated variance of a test statistic is zero or not finite."""


class UndefinedEstimandError(NumericalError):
    """The requested estimand has a zero denominator on this data."""
