"""Exception hierarchy shared by all mgsgan modules."""


class MgsganError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MgsganError):
    """A caller violated a documented precondition."""


class ShapeError(ContractError):
    """Operand shapes are incompatible; the message names both shapes."""


class NumericError(MgsganError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""


class DataError(MgsganError):
    """A dataset file or record is malformed or inconsistent."""


class TrainingAborted(NumericError):
    """Training hit a non-finite loss.

    Carries the epoch/batch where it happened and, when available, the
    serialized checkpoint bytes of the last completed epoch.
    """

    def __init__(self, message, epoch, batch, last_good=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.last_good = last_good
