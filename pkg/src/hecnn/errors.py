"""Exception hierarchy shared by every module of the package."""


class HEError(Exception):
    """Base class for all errors raised by hecnn."""


class ParameterError(HEError, ValueError):
    """Mismatched or out-of-range parameters, shapes, or indices."""


class EncodingError(HEError, ValueError):
    """A scaled message does not fit the signed range of the modulus."""


class StateError(HEError, RuntimeError):
    """An operation was called in the wrong protocol or modulus state."""


class ProtocolError(HEError, RuntimeError):
    """A two-party protocol rule was violated (unknown handle, mask reuse)."""


class FrameError(HEError, ValueError):
    """A wire frame is malformed, truncated, or of an unexpected type."""


class ReconciliationError(HEError, AssertionError):
    """Measured cost counters disagree with the closed-form prediction."""

    def __init__(self, message, diff=None):
        super().__init__(message)
        self.diff = diff or {}
