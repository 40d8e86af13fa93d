"""Exception hierarchy shared by all modules."""


class HBError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HBError, ValueError):
    """An argument is outside the documented domain."""


class CapabilityError(HBError):
    """The request exceeds what an oracle or algorithm can deliver."""


class DivergenceError(HBError):
    """A trajectory left the finite region.

    Attributes:
        last_finite_index: Last step index whose state was finite.
    """

    def __init__(self, message: str, last_finite_index: int):
        super().__init__(message)
        self.last_finite_index = last_finite_index


class SolverError(HBError):
    """An inner nonlinear solve failed to converge."""
