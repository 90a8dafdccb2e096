"""Exception hierarchy shared across the package."""


class DtainError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DtainError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(DtainError):
    """A caller violated an operation's contract (bad argument, bad state)."""


class TapeReuseError(ContractError):
    """backward() was called twice on the same tape."""


class VocabularyError(DtainError):
    """An event id falls outside the vocabulary."""

    def __init__(self, event_id, vocab_size=None):
        self.event_id = event_id
        msg = f"event id {event_id} out of vocabulary"
        if vocab_size is not None:
            msg += f" (size {vocab_size})"
        super().__init__(msg)


class EmptySequenceError(DtainError):
    """An operation that needs at least one (unmasked) event got none."""


class DataOrderingError(DtainError):
    """Timestamps are not ordered as the trail contract requires."""


class ConfigurationError(DtainError):
    """A configuration value is invalid or inconsistent."""


class UndefinedMetricError(DtainError):
    """The metric is undefined for this input (e.g. single-class labels)."""


class NumericError(DtainError):
    """A numeric failure (NaN/Inf) was detected during training."""


class CompatibilityError(DtainError):
    """Checkpoint and dataset do not belong together."""
