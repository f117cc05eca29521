"""Exception types raised across the pipeline.

Parsing and IO errors that originate from a specific input line carry a
1-based ``line_no`` (None when the location is unknown, e.g. when the same
validation runs on in-memory arrays).
"""

from __future__ import annotations


class EventVitError(Exception):
    """Base class for all package-specific errors."""


class LineError(EventVitError):
    """Error tied to a line of a text event file."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class MalformedLine(LineError):
    """Line is not 'x,y,t,p' with integer fields and p in {1, -1}."""


class NonMonotoneTimestamp(LineError):
    """Timestamp decreased relative to the previous event."""


class OutOfBounds(LineError):
    """Event coordinate falls outside the sensor area."""


class BadMagic(EventVitError):
    """Binary payload does not start with the expected magic bytes."""


class TruncatedPayload(EventVitError):
    """Binary payload ends before the declared content."""


class CountMismatch(EventVitError):
    """Binary payload holds more events than the header declares."""


class EmptyRecording(EventVitError):
    """Operation requires at least one event."""


class DimensionNotDivisible(EventVitError):
    """Frame height or width is not a multiple of the patch size."""


class ShapeMismatch(EventVitError):
    """Tensor shape differs from what the operation or manifest expects."""


class PositionOutOfRange(EventVitError):
    """Patch slot index is negative or beyond the frame's slot count."""


class MissingCache(EventVitError):
    """Backward pass invoked without the forward cache it needs."""


class ManifestMismatch(EventVitError):
    """Checkpoint manifest disagrees with its payload or config."""


class ModeMismatch(EventVitError):
    """Cost report was built under a different counting mode."""


class BadTarget(EventVitError):
    """Class target is outside [0, num_classes)."""


class EmptyDataset(EventVitError):
    """Dataset holds no recordings."""
