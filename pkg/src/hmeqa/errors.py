"""Exception types raised across the package."""


class HmeqaError(Exception):
    """Base class for all package errors."""


class DimensionError(HmeqaError, ValueError):
    """Operand shapes are incompatible."""


class EmptySupportError(HmeqaError, ValueError):
    """A masked softmax row has no unmasked position."""


class NumericError(HmeqaError, FloatingPointError):
    """A NaN or Inf was produced; the message names the producing node."""


class ContractError(HmeqaError, ValueError):
    """A precondition of an operation was violated."""


class VocabularyError(HmeqaError, IndexError):
    """A token id falls outside the vocabulary."""


class CheckpointError(HmeqaError, IOError):
    """A checkpoint file is corrupt, truncated or does not match the model."""


class ConfigError(HmeqaError, ValueError):
    """A configuration value is missing or invalid."""


class DivergenceError(HmeqaError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id
