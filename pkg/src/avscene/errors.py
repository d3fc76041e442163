"""Exception hierarchy shared across the package."""


class AvsceneError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(AvsceneError):
    """A binary or text container is malformed (bad magic, header, version)."""


class CorruptionError(FormatError):
    """A container parsed but its payload is truncated or inconsistent."""


class UnsupportedCodecError(AvsceneError):
    """A media file uses an encoding this package does not read."""


class ShapeError(AvsceneError):
    """Array dimensions do not match what an operation requires."""


class SpecError(AvsceneError):
    """A configuration object (filterbank, architecture) is invalid."""


class DataError(AvsceneError):
    """Input data is empty, degenerate, or otherwise unusable."""


class LabelError(AvsceneError):
    """A label vector or distribution violates its contract."""


class AlignmentError(AvsceneError):
    """Parallel sequences (clip ids, label vectors) do not line up."""


class StateError(AvsceneError):
    """An operation was called out of order (e.g. backward before forward)."""


class NumericError(AvsceneError):
    """A computation produced non-finite values."""


class ProvenanceError(AvsceneError):
    """Declared metadata contradicts a known source's properties."""
