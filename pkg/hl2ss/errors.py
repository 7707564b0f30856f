r"""Exception and warning types raised by the hl2ss package.

Every error derives from the builtin exception a caller would otherwise
expect (``ValueError`` for bad arguments, ``RuntimeError`` for bad wire
data, ``ConnectionError`` for transport failures), so generic handlers
keep working.
"""


class Hl2ssError(Exception):
    """Base class for all hl2ss errors."""


class ValidationError(Hl2ssError, ValueError):
    """Invalid argument or configuration, detected before any bytes are
    produced or sent."""


class UnsupportedModeError(ValidationError):
    """The requested operating mode or transfer is not available for the
    port."""


class UsageError(ValidationError):
    """An API was called in the wrong state."""


class ProtocolError(Hl2ssError, RuntimeError):
    """Malformed or unexpected data on the wire."""


class HandshakeError(ProtocolError):
    """The peer closed (or never answered) before the session produced
    any data."""


class TruncatedStreamError(ProtocolError):
    """The peer closed in the middle of a frame or blob."""


class CodecError(ProtocolError):
    """A payload could not be decoded.

    Attributes:
        frame: the undecoded :class:`hl2ss.wire.DataFrame`, if available
    """

    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class TransportError(Hl2ssError, ConnectionError):
    """Connection refused, reset, or timed out."""


class StartupError(Hl2ssError, OSError):
    """The emulator could not bind one of its ports."""


class TimestampWarning(RuntimeWarning):
    """A stream delivered a timestamp lower than its predecessor."""
