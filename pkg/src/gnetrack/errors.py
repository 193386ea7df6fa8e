"""Exception types raised by the package."""


class GnetrackError(Exception):
    """Base class for all package errors."""


class DimensionError(GnetrackError, ValueError):
    """A vector does not match the dimension of the game or set."""


class InfeasibleSetError(GnetrackError, ValueError):
    """The feasible set is empty."""


class SolverError(GnetrackError, RuntimeError):
    """An iterative solver could not continue (for example non-finite values)."""


class InadmissibleScheduleError(GnetrackError, ValueError):
    """Incentive parameters violate ``c >= 2 ell`` or ``0 <= xi < 1/c``.

    Attributes
    ----------
    bound : str
        Short name of the violated bound (``"c >= 2*ell"``, ``"xi >= 0"`` or
        ``"alpha > 0"``).
    """

    def __init__(self, message: str, bound: str):
        super().__init__(message)
        self.bound = bound


class MissingConstantsError(GnetrackError, ValueError):
    """Bound evaluation was asked for without the constants it needs."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__("missing bound constants: " + ", ".join(self.missing))


class ConfigError(GnetrackError, ValueError):
    """A scenario or run configuration is malformed."""
