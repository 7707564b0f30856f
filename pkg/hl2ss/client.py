r"""Client session layer.

A receive session follows four steps: construct, :meth:`RxSession.open`
(connect and send the configuration), call
:meth:`RxSession.get_next_packet` in a loop, then :meth:`RxSession.close`.

::

    with RxSession("127.0.0.1", StreamPort.VLC_LEFTFRONT) as rx:
        frame = rx.get_next_packet()
"""

from __future__ import annotations

import enum
import logging
import socket
import warnings
import numpy as np
from dataclasses import dataclass
from typing import Any, FrozenSet, List, Optional, Tuple, Union

from hl2ss.calibration import Calibration, calibration_size, parse_calibration
from hl2ss.codecs import (
    PayloadCodec,
    RawCodec,
    decode_audio,
    decode_depth_png,
    decode_image,
    get_codec,
)
from hl2ss.control import (
    IPC_REPLY_SIZE,
    VERSION_SIZE,
    ControlCommand,
    Exposure,
    Focus,
    GetVersion,
    IpcMessage,
    MarkerState,
    SceneCommand,
    TemporalDenoising,
    WhiteBalancePreset,
    WhiteBalanceValue,
    decode_reply,
    decode_version,
    encode_control,
    encode_ipc,
    encode_scene,
)
from hl2ss.errors import (
    CodecError,
    HandshakeError,
    Hl2ssError,
    ProtocolError,
    TimestampWarning,
    TransportError,
    TruncatedStreamError,
    UnsupportedModeError,
    UsageError,
)
from hl2ss.streams import (
    IMU_PORTS,
    VLC_PORTS,
    StreamConfig,
    StreamMode,
    StreamPort,
    as_port,
    check_mode,
    default_config,
    encode_config,
    imu_batch_array,
    supported_modes,
    unpack_spatial_input,
)
from hl2ss.utils import close_quietly, recv_exact
from hl2ss.wire import DataFrame, FrameUnpacker, feed_unpacker

logger = logging.getLogger(__name__)


class ChunkSize(enum.IntEnum):
    r"""Receive sizes per ``recv`` call. Only throughput depends on them."""

    SMALL = 4096
    LARGE = 65536

    @classmethod
    def for_port(cls, port: Union[int, StreamPort]) -> "ChunkSize":
        port = as_port(port)
        if port in VLC_PORTS or port in (StreamPort.DEPTH_LONGTHROW, StreamPort.PV):
            return cls.LARGE
        return cls.SMALL


def connect(host: str, port: int, timeout: Optional[float] = None) -> socket.socket:
    r"""Open a TCP connection.

    Raises:
        TransportError: refused, unreachable or timed out
    """
    try:
        sock = socket.create_connection((host, int(port)), timeout=timeout)
    except OSError as e:
        raise TransportError(f"cannot connect to {host}:{int(port)}: {e}") from e
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


@dataclass(frozen=True, eq=False)
class DecodedFrame:
    r"""A frame whose payload has been decoded.

    ``payload`` is a 480x640 uint8 array for VLC, a
    :class:`~hl2ss.codecs.DepthAbImage` for depth, an h x w x 3 uint8 array
    for PV, a 2x1024 float32 array for the microphone, a structured sample
    array for IMU and a :class:`~hl2ss.streams.SpatialInputFrame` for
    Spatial Input.
    """

    timestamp: int
    payload: Any
    pose: Optional[np.ndarray] = None

    def is_valid_pose(self) -> bool:
        return self.pose is not None and bool(self.pose[3, 3] == 1.0)


def decode_payload(
    port: Union[int, StreamPort], frame: DataFrame, config: StreamConfig,
    codec: PayloadCodec,
) -> DecodedFrame:
    r"""Decode the payload of ``frame`` received on ``port``.

    Raises:
        CodecError: the payload cannot be decoded; ``frame`` is attached
    """
    port = as_port(port)
    try:
        if port in VLC_PORTS:
            payload = decode_image(frame.payload, codec, 640, 480)
        elif port == StreamPort.PV:
            payload = decode_image(frame.payload, codec, config.width, config.height, 3)
        elif port == StreamPort.DEPTH_LONGTHROW:
            payload = decode_depth_png(frame.payload)
        elif port == StreamPort.MICROPHONE:
            payload = decode_audio(frame.payload, codec)
        elif port in IMU_PORTS:
            payload = imu_batch_array(frame.payload, port)
        else:
            payload = unpack_spatial_input(frame.payload)
    except ProtocolError as e:
        raise CodecError(f"{port.name}: {e}", frame) from e
    return DecodedFrame(frame.timestamp, payload, frame.pose)


class SessionState(enum.Enum):
    CLOSED = 0
    OPEN = 1


class RxSession:
    r"""Receive session on one stream port.

    Args:
        host: server address
        port: data stream port
        config: stream configuration, default :func:`~hl2ss.streams.default_config`
        chunk_size: bytes per ``recv`` call, default :meth:`ChunkSize.for_port`
        decoded: return :class:`DecodedFrame` instead of raw
            :class:`~hl2ss.wire.DataFrame`
        codec: codec id for video and audio payloads
        timeout: seconds for connect and for each receive, ``None`` blocks
        pv_modes: PV whitelist used to validate the configuration
    """

    def __init__(
        self,
        host: str,
        port: Union[int, StreamPort],
        config: Optional[StreamConfig] = None,
        chunk_size: Optional[int] = None,
        decoded: bool = False,
        codec: str = RawCodec.codec_id,
        timeout: Optional[float] = None,
        pv_modes: Optional[FrozenSet[Tuple[int, int, int]]] = None,
    ):
        self.host = host
        self.port = as_port(port)
        supported_modes(self.port)
        self.config = default_config(self.port) if config is None else config
        self.mode = StreamMode(self.config.mode)
        if self.mode == StreamMode.MODE_2:
            raise UnsupportedModeError(
                "Mode 2 is a one-shot transfer, use download_calibration"
            )
        self.chunk_size = ChunkSize.for_port(self.port) if chunk_size is None else chunk_size
        self.decoded = decoded
        self.codec = get_codec(codec)
        self.timeout = timeout
        self.pv_modes = pv_modes
        self.state = SessionState.CLOSED
        self.unpacker = None
        self._socket = None
        self._frames: List[DataFrame] = []
        self._received = 0
        self._last_timestamp = None

    def open(self) -> None:
        r"""Connect and send the configuration.

        Raises:
            ValidationError: invalid configuration, before connecting
            TransportError: connection failure
            UsageError: the session is already open
        """
        if self.state is SessionState.OPEN:
            raise UsageError(f"{self.port.name} session is already open")
        blob = encode_config(self.port, self.config, self.pv_modes)
        sock = connect(self.host, self.port, self.timeout)
        try:
            sock.sendall(blob)
        except OSError as e:
            close_quietly(sock)
            raise TransportError(f"cannot send {self.port.name} configuration: {e}") from e
        self._socket = sock
        self.unpacker = FrameUnpacker(expect_pose=self.mode == StreamMode.MODE_1)
        self._frames = []
        self._received = 0
        self._last_timestamp = None
        self.state = SessionState.OPEN
        logger.debug("opened %s on %s in mode %d", self.port.name, self.host, self.mode)

    def _receive(self) -> None:
        sock = self._socket
        if sock is None:
            raise TransportError(f"{self.port.name} session was closed")
        try:
            chunk = sock.recv(self.chunk_size)
        except socket.timeout as e:
            raise TransportError(f"{self.port.name} receive timed out") from e
        except OSError as e:
            if self.state is SessionState.CLOSED:
                raise TransportError(f"{self.port.name} session was closed") from e
            raise TransportError(f"{self.port.name} receive failed: {e}") from e
        if not chunk:
            if self.state is SessionState.CLOSED:
                raise TransportError(f"{self.port.name} session was closed")
            if self.unpacker.pending:
                raise TruncatedStreamError(
                    f"{self.port.name} closed with {self.unpacker.pending} bytes of an "
                    "incomplete frame"
                )
            if not self._received:
                raise HandshakeError(
                    f"{self.port.name} closed before sending data; configuration rejected?"
                )
            raise TransportError(f"{self.port.name} closed by peer")
        self._frames.extend(feed_unpacker(self.unpacker, chunk))

    def get_next_packet(self) -> Union[DataFrame, DecodedFrame]:
        r"""Block until the next frame arrives and return it.

        Raises:
            UsageError: the session is not open
            TruncatedStreamError: the peer closed in the middle of a frame
            HandshakeError: the peer closed before the first frame
            CodecError: decoded session and the payload does not decode
        """
        if self.state is not SessionState.OPEN:
            raise UsageError(f"{self.port.name} session is not open")
        while not self._frames:
            self._receive()
        frame = self._frames.pop(0)
        self._received += 1
        if self._last_timestamp is not None and frame.timestamp < self._last_timestamp:
            warnings.warn(
                f"{self.port.name} timestamp went back from {self._last_timestamp} "
                f"to {frame.timestamp}",
                TimestampWarning,
            )
        self._last_timestamp = frame.timestamp
        if self.decoded:
            return decode_payload(self.port, frame, self.config, self.codec)
        return frame

    def close(self) -> None:
        r"""Close the connection. A receive blocked in another thread fails
        with :class:`~hl2ss.errors.TransportError`."""
        if self.state is SessionState.CLOSED:
            return
        self.state = SessionState.CLOSED
        close_quietly(self._socket)
        self._socket = None
        logger.debug("closed %s after %d frames", self.port.name, self._received)

    def __enter__(self) -> "RxSession":
        self.open()
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def download_calibration(
    host: str,
    port: Union[int, StreamPort],
    config: Union[StreamConfig, bytes, None] = None,
    timeout: Optional[float] = 10.0,
) -> Calibration:
    r"""Fetch a sensor's calibration with a Mode 2 transfer.

    The server sends one fixed-size blob and closes the connection; the
    connection is not reusable.

    Args:
        host: server address
        port: stream port supporting Mode 2
        config: Mode 2 configuration, or raw bytes sent verbatim; PV needs
            the full 11-byte string
        timeout: seconds for connect and each receive

    Raises:
        UnsupportedModeError: ``port`` has no Mode 2
        HandshakeError: the server closed without sending the blob
        TruncatedStreamError: the server closed before the full blob
        ProtocolError: data followed the blob
        TransportError: the connection failed or was reset
    """
    port = as_port(port)
    check_mode(port, StreamMode.MODE_2)
    size = calibration_size(port)
    if isinstance(config, (bytes, bytearray)):
        blob = bytes(config)
    else:
        if config is None:
            config = default_config(port, StreamMode.MODE_2)
        if config.mode != StreamMode.MODE_2:
            raise UnsupportedModeError(f"calibration download needs Mode 2, got {config.mode}")
        blob = encode_config(port, config)
    sock = connect(host, port, timeout)
    try:
        sock.sendall(blob)
        data = recv_exact(sock, size, ChunkSize.LARGE, f"{port.name} calibration")
        if sock.recv(1):
            raise ProtocolError(f"{port.name} sent more than {size} calibration bytes")
    except socket.timeout as e:
        raise HandshakeError(f"{port.name} calibration transfer timed out") from e
    except OSError as e:
        raise TransportError(f"{port.name} calibration transfer failed: {e}") from e
    finally:
        close_quietly(sock)
    logger.debug("downloaded %d calibration bytes from %s", size, port.name)
    return parse_calibration(port, data)


class _CommandClient:
    default_port = 0

    def __init__(self, host: str, port: Optional[int] = None, timeout: Optional[float] = 10.0):
        self.host = host
        self.port = self.default_port if port is None else int(port)
        self.timeout = timeout
        self._socket = None

    def open(self) -> None:
        if self._socket is not None:
            raise UsageError(f"connection to port {self.port} is already open")
        self._socket = connect(self.host, self.port, self.timeout)

    def close(self) -> None:
        close_quietly(self._socket)
        self._socket = None

    def __enter__(self):
        self.open()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _send(self, data: bytes) -> None:
        if self._socket is None:
            raise UsageError(f"connection to port {self.port} is not open")
        try:
            self._socket.sendall(data)
        except OSError as e:
            raise TransportError(f"send to port {self.port} failed: {e}") from e

    def _recv(self, size: int, what: str) -> bytes:
        try:
            return recv_exact(self._socket, size, what=what)
        except socket.timeout as e:
            raise TransportError(f"no {what} from port {self.port}") from e
        except Hl2ssError:
            raise
        except OSError as e:
            raise TransportError(f"receive from port {self.port} failed: {e}") from e


class ControlClient(_CommandClient):
    r"""Remote configuration client (port 3809).

    Commands other than :meth:`get_version` get no reply.
    """

    default_port = StreamPort.CONTROL

    def send(self, cmd: ControlCommand) -> None:
        self._send(encode_control(cmd))

    def get_version(self) -> Tuple[int, int, int, int]:
        self.send(GetVersion())
        return decode_version(self._recv(VERSION_SIZE, "version reply"))

    def set_marker_state(self, enable: bool) -> None:
        self.send(MarkerState(int(bool(enable))))

    def set_focus(self, mode: int, range: int, distance: int, value: int, fallback: int) -> None:
        self.send(Focus(mode, range, distance, value, fallback))

    def set_temporal_denoising(self, mode: int) -> None:
        self.send(TemporalDenoising(mode))

    def set_white_balance_preset(self, preset: int) -> None:
        self.send(WhiteBalancePreset(preset))

    def set_white_balance_value(self, value: int) -> None:
        self.send(WhiteBalanceValue(value))

    def set_exposure(self, mode: int, value: int) -> None:
        self.send(Exposure(mode, value))


class IpcClient(_CommandClient):
    r"""Unity IPC client (port 3816). Every message gets a 4-byte reply."""

    default_port = StreamPort.UNITY_IPC

    def send_message(self, msg: IpcMessage) -> int:
        self._send(encode_ipc(msg))
        return decode_reply(self._recv(IPC_REPLY_SIZE, "IPC reply"))

    def send_scene(self, cmd: SceneCommand) -> int:
        r"""Send a remote scene command; returns a key for creators, else 1
        on success and 0 on failure."""
        return self.send_message(encode_scene(cmd))

    def push(self, cmds: List[SceneCommand]) -> List[int]:
        r"""Send ``cmds`` back to back, then collect their replies in
        order."""
        messages = [encode_ipc(encode_scene(cmd)) for cmd in cmds]
        self._send(b"".join(messages))
        return [decode_reply(self._recv(IPC_REPLY_SIZE, "IPC reply")) for _ in messages]
