r"""Recording container.

A recording stores one stream session as it crossed the wire:

=========  =====================================================
bytes      content
=========  =====================================================
8          magic ``HL2SREC1``
2          port, u16
1          mode, u8
4          config blob length ``n``, u32
n          config blob as sent in the handshake
...        data frames, wire layout, pose trailer in Mode 1
8          frame count, u64
=========  =====================================================

All integers are little-endian. Frames are kept as wire bytes so the
container does not depend on any payload codec.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, List, Optional, Union

from hl2ss.errors import ProtocolError, TruncatedStreamError, ValidationError
from hl2ss.streams import StreamMode, StreamPort, as_port, check_mode
from hl2ss.wire import DataFrame, FrameUnpacker, encode_frame, encoded_size, feed_unpacker

logger = logging.getLogger(__name__)

MAGIC = b"HL2SREC1"
_HEADER = struct.Struct("<8sHBI")
_TRAILER = struct.Struct("<Q")


@dataclass(frozen=True)
class RecordingHeader:
    port: StreamPort
    mode: StreamMode
    config: bytes = b""

    @property
    def include_pose(self) -> bool:
        return self.mode == StreamMode.MODE_1

    def encode(self) -> bytes:
        return _HEADER.pack(MAGIC, self.port, self.mode, len(self.config)) + self.config


@dataclass(frozen=True)
class Recording:
    header: RecordingHeader
    frames: List[DataFrame]

    def __len__(self) -> int:
        return len(self.frames)


class RecordingWriter:
    r"""Writes a recording container frame by frame.

    ::

        with RecordingWriter("vlc.hl2r", StreamPort.VLC_LEFTFRONT, 0, blob) as w:
            w.write(frame)

    Args:
        target: path or binary file object
        port: stream port
        mode: stream mode, Mode 2 is not recordable
        config: handshake config blob
    """

    def __init__(
        self,
        target: Union[str, BinaryIO],
        port: Union[int, StreamPort],
        mode: int,
        config: bytes = b"",
    ):
        mode = check_mode(port, mode)
        if mode == StreamMode.MODE_2:
            raise ValidationError("calibration sessions (Mode 2) cannot be recorded")
        self.header = RecordingHeader(as_port(port), mode, bytes(config))
        self._owned = isinstance(target, str)
        self._file = open(target, "wb") if self._owned else target
        header = self.header.encode()
        self._file.write(header)
        self.count = 0
        self.size = len(header)

    def write(self, frame: DataFrame) -> None:
        self._file.write(encode_frame(frame, self.header.include_pose))
        self.count += 1
        self.size += encoded_size(frame, self.header.include_pose)

    def write_raw(self, data: bytes) -> None:
        r"""Append one frame that is already in wire layout."""
        self._file.write(data)
        self.count += 1
        self.size += len(data)

    def close(self, complete: bool = True) -> None:
        r"""Finish the container.

        Args:
            complete: write the frame-count trailer; without it the file
                is rejected by :func:`read_recording`
        """
        if self._file is None:
            return
        if complete:
            self._file.write(_TRAILER.pack(self.count))
            self.size += _TRAILER.size
            logger.debug("wrote %d frames of %s", self.count, self.header.port.name)
        else:
            logger.warning(
                "%s capture aborted after %d frames, no trailer written",
                self.header.port.name,
                self.count,
            )
        self._file.flush()
        if self._owned:
            self._file.close()
        self._file = None

    def __enter__(self) -> "RecordingWriter":
        return self

    def __exit__(self, exc_type, *exc) -> None:
        self.close(complete=exc_type is None)


def _parse(data: bytes) -> Recording:
    if len(data) < _HEADER.size + _TRAILER.size:
        raise TruncatedStreamError(f"recording of {len(data)} bytes is too short")
    magic, port, mode, size = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad recording magic {magic!r}")
    try:
        header = RecordingHeader(as_port(port), check_mode(port, mode))
    except ValidationError as e:
        raise ProtocolError(f"bad recording header: {e}") from e
    start = _HEADER.size + size
    end = len(data) - _TRAILER.size
    if start > end:
        raise TruncatedStreamError("recording ends inside the config blob")
    header = RecordingHeader(header.port, header.mode, bytes(data[_HEADER.size : start]))
    unpacker = FrameUnpacker(header.include_pose)
    frames = feed_unpacker(unpacker, data[start:end])
    if unpacker.pending:
        raise TruncatedStreamError(f"{unpacker.pending} bytes of an incomplete frame")
    (count,) = _TRAILER.unpack_from(data, end)
    if count != len(frames):
        raise ProtocolError(f"trailer says {count} frames, found {len(frames)}")
    return Recording(header, frames)


def read_recording(source: Union[str, bytes, BinaryIO]) -> Recording:
    r"""Load a recording container.

    Args:
        source: path, container bytes or binary file object

    Raises:
        ProtocolError: bad magic, header or trailer count
        TruncatedStreamError: the file ends early
    """
    if isinstance(source, (bytes, bytearray)):
        return _parse(bytes(source))
    if isinstance(source, str):
        with open(source, "rb") as f:
            return _parse(f.read())
    return _parse(source.read())


def iter_wire(recording: Recording) -> Iterator[bytes]:
    r"""Each frame as the wire bytes it arrived as."""
    for frame in recording.frames:
        yield encode_frame(frame, recording.header.include_pose)


def replay(recording: Recording, target: Optional[BinaryIO] = None) -> bytes:
    r"""Re-emit the container bytes of ``recording``.

    ``replay(read_recording(b)) == b`` for any valid container ``b``.
    """
    buffer = io.BytesIO() if target is None else target
    with RecordingWriter(buffer, recording.header.port, recording.header.mode,
                         recording.header.config) as writer:
        for data in iter_wire(recording):
            writer.write_raw(data)
    return buffer.getvalue() if target is None else b""

