"""Exception hierarchy shared across the package.

The CLI maps these onto distinct process exit codes, so keep the
categories coarse: configuration, data, numerics, weight transfer.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(ValueError):
    """Malformed dataset, manifest, or feature file."""


class NumericError(ArithmeticError):
    """Non-finite value produced where finiteness is guaranteed."""


class TransferError(ValueError):
    """Checkpoint transfer failed (missing names or shape mismatch)."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""


class ContractError(ValueError):
    """An operation precondition the caller must guarantee was violated."""


class EmptyMaskError(ContractError):
    """A masked reduction received zero flagged positions."""


class DegenerateSampleError(ValueError):
    """Sample cannot be masked (no maskable positions); skip it."""
