"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and its
subclasses -> 3, NumericError -> 4.
"""


class AbsaError(Exception):
    """Base class for every toolkit error."""


class ShapeError(AbsaError):
    """Operand shapes are incompatible."""


class ContractError(AbsaError):
    """An operation was called outside its contract."""


class LabelError(AbsaError):
    """A tag or class index is out of range."""


class VocabError(AbsaError):
    """A token id falls outside the vocabulary."""


class ConfigError(AbsaError):
    """Invalid run or model configuration."""


class DataError(AbsaError):
    """Invalid example data, e.g. overlapping aspect spans."""


class IngestionError(DataError):
    """A dataset file could not be parsed."""


class AlignmentError(DataError):
    """Character offsets do not line up with the sentence text."""


class NumericError(AbsaError):
    """A non-finite value appeared where a finite one is required."""


class CheckpointError(AbsaError):
    """A checkpoint file is incompatible, truncated, or corrupt."""
