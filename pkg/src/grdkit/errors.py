"""Exception hierarchy.

Errors fall in two families so the command line can map them to exit codes:
``DataError`` (bad or unsupported input, exit 2) and ``NumericError``
(a computation that could not be completed, exit 3).
"""

from __future__ import annotations


class GRDError(Exception):
    """Base class for every error raised by grdkit."""


class DataError(GRDError):
    """Input data is malformed, inconsistent or out of the supported domain."""


class NumericError(GRDError):
    """A numerical routine failed on otherwise valid input."""


# geometry
class DuplicateSite(DataError):
    pass


class CollinearInput(DataError):
    pass


class OutsideConvexHull(DataError):
    pass


class DegenerateTriangle(NumericError):
    pass


class ParallelLines(NumericError):
    pass


# assembly / solver
class SingularAssembly(NumericError):
    pass


class QPFailure(NumericError):
    """Raised by the fitting layer when the solver does not report success."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


# surface fitting and documents
class UnknownDevice(DataError):
    pass


class QualityOutOfRange(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptDocument(DataError):
    pass


# sampling
class GridMismatch(DataError):
    pass


class DegenerateCorpus(DataError):
    pass


class NearSingularPivot(NumericError):
    pass


class NoAdmissiblePivot(NumericError):
    pass


# baselines
class InsufficientSamples(DataError):
    pass


class NoCoverage(DataError):
    pass


# applications
class CoverageError(DataError):
    def __init__(self, message: str, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class EmptyCurve(DataError):
    pass


class EmptyQualityInterval(DataError):
    pass


# corpus and file formats
class SpecError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DuplicateKey(DataError):
    def __init__(self, message: str, lines: tuple[int, int]):
        super().__init__(f"lines {lines[0]} and {lines[1]}: {message}")
        self.lines = lines


class RangeError(DataError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
