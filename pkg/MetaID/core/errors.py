# core/errors.py
from __future__ import annotations

from typing import Optional


class MetaIdError(Exception):
    """Base class for every error raised by the META ID toolkit."""


class DataError(MetaIdError, ValueError):
    """Something is wrong with the user's data (CLI exit code 2)."""


class ParseError(DataError):
    def __init__(self, message: str, line_no: Optional[int] = None) -> None:
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class RecordError(ParseError):
    """A line parsed but its values were rejected (rating, timestamp, keys)."""


class SplitError(DataError):
    pass


class GraphError(DataError):
    pass


class ClusterError(DataError):
    pass


class ConfigError(MetaIdError, ValueError):
    pass


class NumericalError(MetaIdError, ArithmeticError):
    pass


class UndefinedSimilarityError(MetaIdError, ValueError):
    pass


class UnknownIdError(MetaIdError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class StageError(MetaIdError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")
