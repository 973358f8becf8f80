"""Exception hierarchy shared by every trace_forge module."""

from __future__ import annotations


class TraceForgeError(Exception):
    """Base class for all library errors."""


class NonPositiveDepth(TraceForgeError, ValueError):
    pass


class NotStarShaped(TraceForgeError, ValueError):
    pass


class DegenerateGeometry(TraceForgeError, ValueError):
    pass


class OutOfFrustum(TraceForgeError, ValueError):
    pass


class OverlapError(TraceForgeError, ValueError):
    pass


class GenerationFailed(TraceForgeError, RuntimeError):
    pass


class InvalidTrace(TraceForgeError, ValueError):
    pass


class CountMismatch(TraceForgeError, ValueError):
    pass


class ParseError(TraceForgeError, ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class AngleMismatch(TraceForgeError, ValueError):
    pass


class ShapeMismatch(TraceForgeError, ValueError):
    pass


class ZeroStd(TraceForgeError, ValueError):
    pass


class EmptyCollection(TraceForgeError, ValueError):
    pass


class ModalityMismatch(TraceForgeError, ValueError):
    pass


class DivergenceDetected(TraceForgeError, RuntimeError):
    pass


class TooFewSamples(TraceForgeError, ValueError):
    pass


class IoError(TraceForgeError, OSError):
    pass


class DegenerateInputWarning(UserWarning):
    """Raised as a warning when an input tensor carries no foreground."""
