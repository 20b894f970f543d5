"""Exception hierarchy shared by all hmsearch modules.

Each error that the command line can surface carries an ``exit_code``; the
CLI maps uncaught ``HmsError`` instances straight to that code.
"""

from __future__ import annotations


class HmsError(Exception):
    exit_code = 1


class FormatError(HmsError, ValueError):
    """A data file could not be parsed."""

    exit_code = 2


class LengthMismatch(HmsError, ValueError):
    pass


class ZeroVarianceVector(HmsError, ValueError):
    """A feature vector is constant, so its correlation distance is undefined."""

    exit_code = 3

    def __init__(self, message: str, stimulus_id: str | None = None):
        super().__init__(message)
        self.stimulus_id = stimulus_id


class DegenerateRdm(HmsError, ValueError):
    exit_code = 3


class StimulusMismatch(HmsError, ValueError):
    exit_code = 4


class UnknownColumn(HmsError, KeyError):
    exit_code = 5

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class EmptyList(HmsError, ValueError):
    pass


class TooFewFrames(HmsError, ValueError):
    pass


class DegenerateSeries(HmsError, ValueError):
    pass


class InvalidP(HmsError, ValueError):
    pass


class SingularControl(HmsError, ValueError):
    pass


class DimensionMismatch(HmsError, ValueError):
    pass


class ZeroNormVector(HmsError, ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class InvalidSpace(HmsError, ValueError):
    pass


class BackendFailure(HmsError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class MissingTrajectory(HmsError, KeyError):
    pass


class InvalidCounts(HmsError, ValueError):
    pass


class InvalidSpec(HmsError, ValueError):
    pass


class InvalidProfile(HmsError, ValueError):
    pass
