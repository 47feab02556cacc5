"""Exception hierarchy.

Every error carries an ``exit_status`` so the command line can map failures
onto its documented exit codes without inspecting messages.
"""


class CmbvsError(Exception):
    """Base class for all package errors."""

    exit_status = 2


class UsageError(CmbvsError):
    """Invalid invocation: bad flags, empty inputs to summaries, etc."""

    exit_status = 1


class DataError(CmbvsError):
    """Input data is malformed or inconsistent."""

    exit_status = 2


class DegenerateInputError(DataError):
    pass


class DimensionError(DataError):
    pass


class DomainError(DataError):
    """A value lies outside the domain of a function (e.g. log of zero)."""


class ConfigurationError(DataError):
    pass


class IngestionError(DataError):
    pass


class NumericalError(CmbvsError):
    exit_status = 3


class NumericalRangeError(NumericalError):
    """A linear predictor left the representable range of ``exp``."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ChainAborted(NumericalError):
    """The sampler hit an invariant violation or non-finite quantity.

    ``last_good_iteration`` is the last completed sweep (0 if none).
    """

    def __init__(self, message, last_good_iteration=0, taxon=None):
        super().__init__(message)
        self.last_good_iteration = last_good_iteration
        self.taxon = taxon
