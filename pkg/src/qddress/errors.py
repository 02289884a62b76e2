"""Exception types raised across the package."""


class QDDressError(Exception):
    """Base class for all package errors."""


class ConfigInvalid(QDDressError):
    """A configuration value is missing or malformed.

    The offending key is available as ``key`` (``section.name``).
    """

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class IoFailure(QDDressError):
    pass


class MalformedGrid(QDDressError):
    pass


class NonUniformGrid(QDDressError):
    pass


class GridTooCoarse(QDDressError):
    pass


class StepUnderflow(QDDressError):
    """The adaptive integrator needed a step below the configured floor."""


class AmbiguousTracking(QDDressError):
    """Successive dressed frames cannot be matched unambiguously."""


class CouplingTooStrong(QDDressError):
    pass


class NoSolution(QDDressError):
    pass


class DegenerateLifetimes(QDDressError):
    pass


class FitDiverged(QDDressError):
    pass
