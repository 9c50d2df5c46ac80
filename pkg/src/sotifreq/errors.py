"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes:
``ConfigError`` -> 2, ``DataError`` -> 3, ``InfeasibleError`` -> 4.
"""
from __future__ import annotations


class SotifError(Exception):
    """Base class for all package errors."""


class ConfigError(SotifError):
    pass


class DataError(SotifError):
    pass


class InfeasibleError(SotifError):
    pass


# --- trajectory ingest -------------------------------------------------------

class EmptyFile(DataError):
    def __init__(self, path):
        super().__init__(f"empty file: {path}")
        self.path = path


class MissingColumn(DataError):
    def __init__(self, name, path=None):
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {name!r}{where}")
        self.name = name


class MalformedNumber(DataError):
    def __init__(self, row, col, value=None):
        super().__init__(f"malformed number at row {row}, column {col!r}: {value!r}")
        self.row = row
        self.col = col
        self.value = value


class NonContiguousFrames(DataError):
    def __init__(self, vehicle_id, frame=None):
        super().__init__(f"track {vehicle_id} has a frame gap near frame {frame}")
        self.vehicle_id = vehicle_id
        self.frame = frame


class DuplicateFrame(DataError):
    def __init__(self, vehicle_id, frame):
        super().__init__(f"track {vehicle_id} has duplicate frame {frame}")
        self.vehicle_id = vehicle_id
        self.frame = frame


class DanglingReference(DataError):
    def __init__(self, vehicle_id):
        super().__init__(f"scenario references unknown vehicle {vehicle_id}")
        self.vehicle_id = vehicle_id


class NonPositiveGap(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


# --- models ------------------------------------------------------------------

class UnknownModel(ConfigError, ValueError):
    pass


class InvalidErrorRegionFour(ValueError, SotifError):
    """Position error at or beyond the safe distance: the rear vehicle never reacts."""


class NeverExceeds(SotifError):
    pass


class AlwaysExceeds(SotifError):
    pass


class ZeroProbability(ValueError, SotifError):
    pass


class DegenerateCoalition(ValueError, SotifError):
    pass


class TooManyFeatures(ValueError, SotifError):
    pass


class SingularSystem(SotifError, ArithmeticError):
    pass


class RankDeficient(SingularSystem):
    pass


class FrameMisalignment(DataError, ValueError):
    pass


class ExternalTrackerFailure(DataError):
    def __init__(self, returncode, stderr=""):
        super().__init__(f"external tracker exited with code {returncode}: {stderr.strip()[:500]}")
        self.returncode = returncode


class DomainError(ValueError, SotifError):
    pass


class Infeasible(InfeasibleError):
    def __init__(self, message, min_achievable=None):
        super().__init__(message)
        self.min_achievable = min_achievable


class UnconstrainedBudget(InfeasibleError):
    pass


class UnknownKind(ConfigError, ValueError):
    pass
