"""Exception taxonomy shared across the toolkit.

Errors are grouped so the command-line layer can map them onto exit codes:
usage problems, malformed data, and numerical failures are distinct.
"""

from __future__ import annotations


class PointregError(Exception):
    """Base class for all toolkit-specific errors."""


# ---------------------------------------------------------------------------
# usage / configuration


class UsageError(PointregError):
    """Invalid command-line usage or inconsistent configuration."""


# ---------------------------------------------------------------------------
# data / format problems


class DataError(PointregError):
    """Base class for malformed or inconsistent input data."""


class EmptyInputError(DataError):
    """An operation received an empty point set or array."""


class DimensionError(DataError):
    """Array shapes are incompatible for the requested operation."""


class UnitMismatchError(DataError):
    """Two point sets carry different unit tags where one is required."""


class PairingError(DataError):
    """Landmark arrays cannot be paired one-to-one."""


class MeshParseError(DataError):
    """A mesh file could not be parsed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PointFileError(DataError):
    """A point-cloud file (xyz / ply) could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VisibilityError(DataError):
    """A sparse-visibility selection produced no points or is ill-posed."""


class ParameterError(DataError):
    """Invalid parameters for a synthetic shape family or configuration."""


# ---------------------------------------------------------------------------
# checkpoint files


class CheckpointError(DataError):
    """Base class for model checkpoint problems."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint bytes are truncated, mangled, or fail the checksum."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


class CheckpointShapeError(CheckpointError):
    """Checkpoint layer shapes do not match the expected architecture."""


# ---------------------------------------------------------------------------
# numerical failures


class NumericalError(PointregError):
    """Base class for runtime numerical failures."""


class InvalidRotationError(NumericalError):
    """A matrix claimed to be a rotation is not orthonormal with det +1."""


class DegenerateGeometryError(NumericalError):
    """Geometry too degenerate to proceed (singular system, zero extent)."""


class SolveError(NumericalError):
    """A linear solve inside an iterative method failed."""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss.

    ``last_good`` holds the most recent parameter set that produced a
    finite loss, so callers can checkpoint it.
    """

    def __init__(self, message: str, last_good=None, step: int | None = None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step
