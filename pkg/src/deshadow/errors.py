"""Exception hierarchy shared by every deshadow module.

The CLI maps these onto process exit codes: contract/usage problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class DeshadowError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(DeshadowError, ValueError):
    """An operation was called in violation of its documented contract."""


class NumericsError(DeshadowError, ArithmeticError):
    """A tensor entered the NaN/Inf error state or training diverged.

    Attributes ``step`` and ``batch_ids`` are populated when the failure
    happened inside a training loop, so the offending batch can be replayed.
    """

    def __init__(self, message, step=None, batch_ids=None):
        super().__init__(message)
        self.step = step
        self.batch_ids = list(batch_ids) if batch_ids is not None else None


class DataError(DeshadowError):
    """Datasets, images, or files on disk do not satisfy their contract."""


class CheckpointError(DataError):
    """A checkpoint file is malformed: bad magic, bad version, or truncated."""


class EmptyRegionError(ContractError):
    """A metric was asked to aggregate over a region with no pixels."""
