from typing import Optional, Sequence


class PVNasError(Exception):
    """Base class for every error raised by the search engine"""


# Dataset

class SchemaMismatch(PVNasError):
    pass


class MalformedRow(PVNasError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"Malformed row at line {line}: {reason}")


class DuplicateTimestamp(PVNasError):
    def __init__(self, timestamp):
        self.timestamp = timestamp
        super().__init__(f"Duplicate timestamp: {timestamp}")


class EmptyFile(PVNasError):
    pass


class EmptyResult(PVNasError):
    pass


class UnimputableGap(PVNasError):
    pass


class InvalidSplit(PVNasError, ValueError):
    pass


class TooSmall(PVNasError):
    pass


class MissingFuture(PVNasError):
    pass


# Differentiable core

class ShapeMismatch(PVNasError, ValueError):
    def __init__(self, op: str, *shapes: Sequence[int], detail: Optional[str] = None):
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class UnboundInput(PVNasError):
    pass


class NotScalarLoss(PVNasError):
    pass


# Search space and evaluation

class InvalidOption(PVNasError, ValueError):
    def __init__(self, gene: str, value):
        self.gene = gene
        self.value = value
        super().__init__(f"Invalid option {value!r} for gene '{gene}'")


class MalformedEncoding(PVNasError, ValueError):
    pass


class LengthMismatch(PVNasError, ValueError):
    pass


class AllZeroTruth(PVNasError, ValueError):
    pass


class NonFiniteLoss(PVNasError):
    pass


class InsufficientData(PVNasError):
    pass


class ConfigError(PVNasError):
    pass
