"""Exception types shared across the toolkit."""


class CrossemoError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(CrossemoError):
    """Tensor shapes disagree with declared dimensions."""


class DuplicateKeyError(CrossemoError):
    """An identifier that must be unique appeared twice."""


class FileFormatError(CrossemoError):
    """File is not in the expected format (bad magic, unknown version)."""


class CorruptFileError(CrossemoError):
    """File has the right format but inconsistent internal structure."""


class StoreIOError(CrossemoError):
    """Underlying I/O failure, annotated with the file path."""


class DataValidationError(CrossemoError):
    """Payload or metadata violates a validity constraint."""


class InsufficientDataError(CrossemoError):
    """Operation needs more samples than were provided."""


class ConfigError(CrossemoError):
    """Configuration value out of range or inconsistent."""


class NotPSDError(CrossemoError):
    """Matrix expected to be positive semi-definite is not, beyond tolerance."""


class CheckpointError(CrossemoError):
    """Checkpoint missing, unreadable, or incompatible with the current model."""
