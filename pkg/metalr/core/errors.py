# metalr/core/errors.py
from typing import Optional, Sequence


class MetaLRError(Exception):
    """Base class for every error raised by the metalr package."""


class SpecError(MetaLRError, ValueError):
    """A model specification is invalid (incompatible sizes, unknown layer kinds)."""


class ShapeMismatchError(MetaLRError, ValueError):
    def __init__(self, layer: str, expected: Sequence[int], actual: Sequence[int]):
        self.layer = layer
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"Shape mismatch at layer '{layer}': expected {self.expected}, got {self.actual}"
        )


class LabelRangeError(MetaLRError, ValueError):
    """A label lies outside [0, num_classes)."""


class StaleCacheError(MetaLRError, RuntimeError):
    """backward() received a cache produced from different parameters."""


class LayerSetMismatchError(MetaLRError, ValueError):
    def __init__(self, what: str, expected: Sequence[str], actual: Sequence[str]):
        self.expected = sorted(expected)
        self.actual = sorted(actual)
        super().__init__(f"Layer set mismatch in {what}: expected {self.expected}, got {self.actual}")


class NonFiniteError(MetaLRError, ArithmeticError):
    """A NaN or Inf was produced or received."""


class DivergenceError(MetaLRError, RuntimeError):
    def __init__(self, iteration: int, detail: Optional[str] = None):
        self.iteration = iteration
        message = f"Training diverged at iteration {iteration}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class StreamError(MetaLRError, ValueError):
    """A batch stream cannot be built or drawn from."""


class DatasetError(MetaLRError, ValueError):
    """A dataset, split or task cannot be built as requested."""


class DatasetFormatError(DatasetError):
    """Base class for ingestion failures."""


class MalformedHeaderError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


class ConfigError(MetaLRError, ValueError):
    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class OracleGridError(MetaLRError, ValueError):
    """The bi-level oracle grid is too large or malformed."""


class ReportIOError(MetaLRError, OSError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
