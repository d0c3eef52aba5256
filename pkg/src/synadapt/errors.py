"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors -> 1,
data errors -> 2, numeric failures -> 3.
"""


class SynAdaptError(Exception):
    """Base class for all package errors."""


class UsageError(SynAdaptError):
    """Bad flags, bad config keys, malformed argument values."""


class DataError(SynAdaptError):
    """Malformed or missing input data (files, corpora, checkpoints)."""


class NumericError(SynAdaptError):
    """Numeric-contract failures: divergence, failed gradient checks."""


class DimensionError(SynAdaptError):
    """Shape mismatch in a dense kernel."""


class DegenerateRowError(NumericError):
    """A softmax row whose entries are all -inf has no distribution."""


class InvalidSpanError(DataError):
    """Entity span violates the marker-instance contract."""


class IncompatibleConfigError(DataError):
    """Components built against different model configurations."""


class NoPositivesError(DataError):
    """A corpus or batch without any same-uid pair cannot be trained on."""


class EmptyBatchError(DataError):
    """Every instance in the batch was skipped; the loss is undefined."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""


class CheckpointError(DataError):
    """Corrupt, truncated, or version-mismatched checkpoint container."""


class NoAmbiguityError(DataError):
    """Probe corpus has no surface shared across distinct uids."""
