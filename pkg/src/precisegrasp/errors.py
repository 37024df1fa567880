"""Exception types shared across the package."""


class PreciseGraspError(Exception):
    """Base class for all package errors."""


class RejectedInputError(PreciseGraspError, ValueError):
    pass


class DegenerateGeometryError(PreciseGraspError, ValueError):
    pass


class ConfigurationError(PreciseGraspError, ValueError):
    pass


class SimulationDivergence(PreciseGraspError, RuntimeError):
    pass


class UnbalanceableDataError(PreciseGraspError, ValueError):
    pass


class CorruptFileError(PreciseGraspError, IOError):
    """Raised when a binary container fails validation.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ShapeError(PreciseGraspError, ValueError):
    pass


class NumericFault(PreciseGraspError, FloatingPointError):
    pass


class TransferError(PreciseGraspError, ValueError):
    pass


class UnknownObjectError(PreciseGraspError, KeyError):
    pass
