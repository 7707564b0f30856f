r"""Common data frame structure shared by every stream port, and the
incremental state machine that unpacks frames from a TCP byte stream.

A frame on the wire is::

    u64 timestamp | u32 payload size | payload | (4x4 f32 pose, optional)

All integers are little-endian and matrices are row-major. Whether a pose
trailer follows each payload is decided once per session by the stream
mode, so the unpacker is constructed with ``expect_pose`` and never
switches.
"""

from __future__ import annotations

import enum
import struct
import numpy as np
from dataclasses import dataclass
from typing import List, Optional

from hl2ss.errors import ProtocolError, TruncatedStreamError, ValidationError

HEADER = struct.Struct("<QI")
HEADER_SIZE = HEADER.size  # 12
POSE_SIZE = 64
MAX_PAYLOAD_SIZE = 64 * 1024 * 1024
TIMESTAMP_MAX = 2**64 - 1

# hundreds of nanoseconds per second
TICKS_PER_SECOND = 10_000_000


def pose_is_valid(pose: Optional[np.ndarray]) -> bool:
    r"""True iff the last element of the 4x4 pose matrix is 1.

    The device writes 0 there for frames where tracking was lost.

    Args:
        pose: 4x4 matrix, or ``None``
    """
    if pose is None:
        return False
    return bool(np.asarray(pose, dtype=np.float32).reshape(4, 4)[3, 3] == 1.0)


def encode_pose(pose: np.ndarray) -> bytes:
    m = np.asarray(pose, dtype="<f4")
    if m.shape != (4, 4):
        raise ValidationError(f"pose must be 4x4, got shape {m.shape}")
    return m.tobytes(order="C")


def decode_pose(data: bytes) -> np.ndarray:
    if len(data) != POSE_SIZE:
        raise ProtocolError(f"pose must be {POSE_SIZE} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(4, 4).astype(np.float32)


@dataclass(frozen=True, eq=False)
class DataFrame:
    r"""The universal unit of transfer.

    Attributes:
        timestamp: hundreds of nanoseconds in the shared device clock domain
        payload: stream-specific payload bytes
        pose: optional 4x4 float32 device pose (Mode 1 sessions only)
    """

    timestamp: int
    payload: bytes
    pose: Optional[np.ndarray] = None

    def is_valid_pose(self) -> bool:
        return pose_is_valid(self.pose)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DataFrame):
            return NotImplemented
        if self.timestamp != other.timestamp or bytes(self.payload) != bytes(
            other.payload
        ):
            return False
        if self.pose is None or other.pose is None:
            return self.pose is None and other.pose is None
        return encode_pose(self.pose) == encode_pose(other.pose)

    def __repr__(self) -> str:
        return (
            f"DataFrame(timestamp={self.timestamp}, payload=<{len(self.payload)} bytes>, "
            f"pose={'None' if self.pose is None else 'valid' if self.is_valid_pose() else 'invalid'})"
        )


def encoded_size(frame: DataFrame, include_pose: bool) -> int:
    return HEADER_SIZE + len(frame.payload) + (POSE_SIZE if include_pose else 0)


def encode_frame(frame: DataFrame, include_pose: bool) -> bytes:
    r"""Serialize ``frame`` in the common data frame layout.

    Args:
        frame: frame to serialize
        include_pose: append the 64-byte pose trailer (Mode 1 sessions)

    Raises:
        ValidationError: ``include_pose`` is set but the frame has no pose,
            or the timestamp does not fit in a u64
    """
    if include_pose and frame.pose is None:
        raise ValidationError("include_pose requested but frame has no pose")
    if not 0 <= frame.timestamp <= TIMESTAMP_MAX:
        raise ValidationError(f"timestamp {frame.timestamp} does not fit in u64")
    parts = [HEADER.pack(frame.timestamp, len(frame.payload)), bytes(frame.payload)]
    if include_pose:
        parts.append(encode_pose(frame.pose))
    return b"".join(parts)


class UnpackerState(enum.Enum):
    WANT_HEADER = 0
    WANT_PAYLOAD = 1
    WANT_POSE = 2


class FrameUnpacker:
    r"""Incremental data frame parser.

    Feed it chunks in stream order; it returns every frame completed by
    each chunk and keeps the remainder. A frame is never emitted partially.
    Not safe to share between threads.

    Args:
        expect_pose: whether every frame carries the 64-byte pose trailer
        max_payload: payload sizes above this are treated as stream
            desynchronization
    """

    def __init__(self, expect_pose: bool, max_payload: int = MAX_PAYLOAD_SIZE):
        self.expect_pose = expect_pose
        self.max_payload = max_payload
        self.state = UnpackerState.WANT_HEADER
        self._buffer = bytearray()
        self._timestamp = 0
        self._size = 0
        self._payload = b""

    @property
    def pending(self) -> int:
        """Number of bytes received that do not yet form a complete
        frame."""
        consumed = 0
        if self.state is UnpackerState.WANT_PAYLOAD:
            consumed = HEADER_SIZE
        elif self.state is UnpackerState.WANT_POSE:
            consumed = HEADER_SIZE + self._size
        return consumed + len(self._buffer)

    def feed(self, chunk: bytes) -> List[DataFrame]:
        r"""Consume ``chunk`` and return the frames it completes.

        Raises:
            ProtocolError: a header announces a payload larger than
                ``max_payload``; the session cannot be resynchronized
        """
        frames = []
        if not chunk:
            return frames
        self._buffer += chunk
        offset = 0
        while True:
            available = len(self._buffer) - offset
            if self.state is UnpackerState.WANT_HEADER:
                if available < HEADER_SIZE:
                    break
                self._timestamp, self._size = HEADER.unpack_from(self._buffer, offset)
                if self._size > self.max_payload:
                    raise ProtocolError(
                        f"payload size {self._size} exceeds limit {self.max_payload}"
                    )
                offset += HEADER_SIZE
                self.state = UnpackerState.WANT_PAYLOAD
            elif self.state is UnpackerState.WANT_PAYLOAD:
                if available < self._size:
                    break
                payload = bytes(self._buffer[offset : offset + self._size])
                offset += self._size
                if self.expect_pose:
                    self._payload = payload
                    self.state = UnpackerState.WANT_POSE
                else:
                    frames.append(DataFrame(self._timestamp, payload))
                    self.state = UnpackerState.WANT_HEADER
            else:
                if available < POSE_SIZE:
                    break
                pose = decode_pose(bytes(self._buffer[offset : offset + POSE_SIZE]))
                offset += POSE_SIZE
                frames.append(DataFrame(self._timestamp, self._payload, pose))
                self._payload = b""
                self.state = UnpackerState.WANT_HEADER
        del self._buffer[:offset]
        return frames


def feed_unpacker(unpacker: FrameUnpacker, chunk: bytes) -> List[DataFrame]:
    r"""Feed one received chunk to ``unpacker``.

    However a byte stream is split into chunks, the frames emitted over all
    calls are the ones :func:`parse_frames` finds in the whole stream.
    """
    return unpacker.feed(chunk)


def parse_frames(
    data: bytes, expect_pose: bool, max_payload: int = MAX_PAYLOAD_SIZE
) -> List[DataFrame]:
    r"""Parse a complete buffer of back-to-back frames in one shot.

    Raises:
        TruncatedStreamError: the buffer ends inside a frame
    """
    unpacker = FrameUnpacker(expect_pose, max_payload)
    frames = unpacker.feed(data)
    if unpacker.pending:
        raise TruncatedStreamError(
            f"{unpacker.pending} trailing bytes do not form a complete frame"
        )
    return frames
