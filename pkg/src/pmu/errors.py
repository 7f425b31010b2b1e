"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class InputError(ValueError):
    """Bad user-supplied input (corpus, config, manifest, ...)."""


class FormatError(ValueError):
    """A serialized file does not match its documented format."""


class TrainingError(RuntimeError):
    """Training hit a state it cannot recover from (e.g. non-finite loss)."""
