"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` to exit code 2 and every other
:class:`DonorPairError` to exit code 3.
"""


class DonorPairError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(DonorPairError, ValueError):
    """Malformed or inconsistent experiment configuration."""


class InvalidParameterError(DonorPairError, ValueError):
    """A physical parameter is non-finite or outside its allowed range."""


class ContractViolation(DonorPairError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class AccuracyError(DonorPairError, ValueError):
    """The requested integration step is too coarse for the dynamics."""


class UnsupportedConfigurationError(DonorPairError, ValueError):
    """The operation is not defined for the given nuclear configuration."""


class ManifoldError(DonorPairError, ValueError):
    """State has too much weight outside the triplet manifold."""


class InsufficientDataError(DonorPairError, ValueError):
    pass


class DegenerateDataError(DonorPairError, ValueError):
    pass


class NotMeasurableError(DonorPairError, ValueError):
    """A rise time was requested on a blip that never saturates."""
