"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class ApproxCalError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ApproxCalError, ValueError):
    """A configuration or argument violates a documented constraint."""


class ProblemFormatError(ApproxCalError):
    """A problem file could not be parsed.

    Attributes
    ----------
    offset : int
        Byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class HeaderError(ProblemFormatError):
    pass


class DimensionMismatchError(ProblemFormatError):
    pass


class TruncatedPayloadError(ProblemFormatError):
    pass


class NumericFailure(ApproxCalError):
    """A solver produced a non-finite or otherwise unusable value."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class SingularDenominatorError(NumericFailure):
    def __init__(self, antenna: int, iteration: int, value: float):
        ApproxCalError.__init__(
            self,
            f"singular denominator |Z|^2 = {value!r} for antenna p={antenna} "
            f"at iteration i={iteration}",
        )
        self.iteration = iteration
        self.antenna = antenna
        self.value = value


class HarnessError(ApproxCalError):
    """An experiment harness cannot proceed, e.g. the reference run diverged."""
