"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: usage errors exit 1, data
errors exit 2, numeric failures exit 3.
"""


class EjamError(Exception):
    """Base class for all toolkit-specific errors."""


class DataError(EjamError):
    """Invalid, corrupt, or inconsistent data (files, corpora, shapes)."""


class FormatError(DataError):
    """A container file failed magic, version, or checksum validation."""


class NumericError(EjamError):
    """A numeric procedure failed (divergence, non-finite values)."""


class UndecidableError(NumericError):
    """Blind decay estimation found no usable free-decay segments."""


class InfeasibleRoomError(NumericError):
    """No wall reflection coefficient can realize the requested decay."""


class UnmeasurableDecayError(NumericError):
    """An impulse response does not contain enough decay range to fit."""
