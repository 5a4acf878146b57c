"""Exception hierarchy for the covsplat package.

Every error raised on purpose derives from :class:`CovsplatError`. Errors about
bad input values also derive from :class:`ValueError`; solver breakdowns derive
from :class:`ArithmeticError`, so callers can catch the builtin family.
"""
from __future__ import annotations


class CovsplatError(Exception):
    """Base class for all covsplat errors."""


# geometry
class NonPositiveDepth(CovsplatError, ValueError):
    """A point to project lies on or behind the camera plane."""


class NonPositiveInverseDepth(CovsplatError, ValueError):
    """An inverse depth to unproject is zero or negative."""


# frame graph / flow
class InsufficientKeyframes(CovsplatError, ValueError):
    pass


class UnknownFrame(CovsplatError, KeyError):
    pass


class NoValidPixels(CovsplatError, ValueError):
    pass


# bundle adjustment
class EmptyGraph(CovsplatError, ValueError):
    pass


class SingularSystem(CovsplatError, ArithmeticError):
    pass


class NotPositiveDefinite(CovsplatError, ArithmeticError):
    pass


# mapping
class DegenerateLevel(CovsplatError, ValueError):
    pass


class EmptyMask(CovsplatError, ValueError):
    pass


# io / pipeline
class ConfigError(CovsplatError, ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class InvalidSpec(CovsplatError, ValueError):
    pass


class DatasetError(CovsplatError):
    pass


class MissingIndex(DatasetError):
    pass


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, path: str = "", detail: str = ""):
        self.line_no = line_no
        self.path = path
        msg = f"malformed line {line_no}"
        if path:
            msg += f" in {path}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NoEvalFrames(CovsplatError):
    pass


class TooFewPoses(CovsplatError, ValueError):
    pass
