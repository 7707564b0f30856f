r"""Utility functions."""
from functools import wraps
import socket
import numpy as np
from typing import Optional, Sequence

from hl2ss.errors import HandshakeError, TruncatedStreamError, ValidationError


def require_shape(array: np.ndarray, shape: Sequence[int], name: str) -> np.ndarray:
    r"""Return ``array`` as a numpy array, raising if its shape differs.

    Args:
        array: array-like to check
        shape: expected shape
        name: argument name used in the error message
    """
    array = np.asarray(array)
    if array.shape != tuple(shape):
        raise ValidationError(
            f"{name} must have shape {tuple(shape)}, got {array.shape}"
        )
    return array


def as_matrix4(m, name: str = "matrix") -> np.ndarray:
    r"""Coerce ``m`` to a 4x4 float32 array (row-major)."""
    return require_shape(np.asarray(m, dtype=np.float32), (4, 4), name)


def _check_same_shape(fn):
    # first two positional arguments are images that must agree in shape
    @wraps(fn)
    def new_fn(a, b, *args, **kwargs):
        a_shape = np.shape(a)
        b_shape = np.shape(b)
        if a_shape != b_shape:
            raise ValidationError(
                f"arguments must have equal shapes, got {a_shape} and {b_shape}"
            )
        return fn(a, b, *args, **kwargs)

    return new_fn


def recv_exact(
    sock: socket.socket, size: int, chunk: int = 65536, what: str = "data"
) -> bytes:
    r"""Read exactly ``size`` bytes from ``sock``.

    Args:
        sock: connected socket
        size: number of bytes to read
        chunk: maximum bytes per ``recv`` call
        what: description used in error messages

    Raises:
        HandshakeError: the peer closed before sending anything
        TruncatedStreamError: the peer closed after a partial read
    """
    buffer = bytearray()
    while len(buffer) < size:
        part = sock.recv(min(chunk, size - len(buffer)))
        if not part:
            if not buffer:
                raise HandshakeError(f"connection closed before any {what} arrived")
            raise TruncatedStreamError(
                f"connection closed after {len(buffer)} of {size} bytes of {what}"
            )
        buffer += part
    return bytes(buffer)


def close_quietly(sock: Optional[socket.socket]) -> None:
    r"""Shut down and close ``sock``, ignoring errors from an already dead
    connection."""
    if sock is None:
        return
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    sock.close()
