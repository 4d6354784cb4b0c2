"""Exception hierarchy shared across the pipeline.

Every error carries an exit code so the CLI can map failures onto its
documented exit-code contract (see cli.py).
"""

from __future__ import annotations


class EvcasError(Exception):
    """Base class; exit_code is what the CLI returns for this failure."""

    exit_code = 5


class BoundsError(EvcasError):
    """Event pixel outside the sensor."""

    exit_code = 5


class ParseError(EvcasError):
    """Malformed event record; carries the 1-based line/record number."""

    exit_code = 4

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrderingError(EvcasError):
    """Timestamp regression beyond the configured tolerance."""

    exit_code = 4

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class InsufficientDataError(EvcasError):
    """Too few events for the requested operation."""

    exit_code = 5


class DegenerateGeometryError(EvcasError):
    """Two-view geometry too weak to triangulate (near-parallel rays)."""

    exit_code = 5


class BehindCameraError(EvcasError):
    """Triangulated point has negative depth in one of the cameras."""

    exit_code = 5


class TimeRegressionError(EvcasError):
    """Kinematics update with t_cur < t_prev."""

    exit_code = 5


class DegenerateIntervalError(EvcasError):
    """Kinematics update over a zero-length interval."""

    exit_code = 5


class IncompleteTrackError(EvcasError):
    """Track is missing data (e.g. lateral edges) required by the caller."""

    exit_code = 5


class InfeasiblePlanError(EvcasError):
    """Avoidance plan would exceed the lateral-rate limit."""

    exit_code = 5


class ProvenanceError(EvcasError):
    """Outputs and ground truth come from different seeds/specs."""

    exit_code = 5
