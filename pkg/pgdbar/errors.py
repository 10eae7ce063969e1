"""Exceptions raised by pgdbar"""


class PgdError(Exception):
    """Base class for all pgdbar errors"""


class InvalidArgument(PgdError, ValueError):
    """An argument is outside of its valid domain"""


class InvalidState(PgdError):
    """An operation was called in a state where it is not defined"""


class IncompatibleInitialData(InvalidArgument):
    """Initial data violate the fixed left end"""


class SolverFailure(PgdError):
    """A linear system could not be solved"""


class EnrichmentBreakdown(SolverFailure):
    """A fixed-point sub-problem became singular"""


class DegenerateMode(SolverFailure):
    """A mode has a vanishing metric norm"""


class UpdateFailure(SolverFailure):
    """The temporal update step matrix is numerically singular"""


class UndefinedReference(PgdError):
    """A relative error was requested against a zero reference"""


class ConfigurationError(PgdError):
    """A configuration value is missing or invalid

    Attributes
    ----------
    path : str
        Dotted path of the offending field, e.g. "discretization.elements".

    """

    def __init__(self, path, message):
        self.path = path
        super().__init__("{}: {}".format(path, message))


class ReportWriteError(PgdError, OSError):
    """Report files could not be written"""
