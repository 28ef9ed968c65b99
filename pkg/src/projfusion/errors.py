"""Exception types shared across the package."""


class EmbeddingFormatError(ValueError):
    """Raised for a bad magic string, unsupported version, or malformed header."""


class CorruptFileError(EmbeddingFormatError):
    """Raised when a payload ends before the header-declared counts are satisfied."""


class DatasetValidationError(ValueError):
    """Raised when dataset contents violate an invariant (labels, finiteness, names)."""


class DegenerateVectorError(ValueError):
    """Raised when a cosine is requested against a (near-)zero vector."""


class StreamError(ValueError):
    """Raised for inconsistent task-stream parameters."""
