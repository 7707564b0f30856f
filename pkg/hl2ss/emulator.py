r"""Device emulator.

Listens on every stream port plus the remote configuration and Unity IPC
ports, performs the configuration handshake, and streams synthetic data from
a :class:`~hl2ss.device.DeviceModel`.

Each port admits one client at a time: a connection that arrives while
another session is active is accepted and closed immediately.

::

    handle = serve(EmulatorConfig(clock_multiplier=10))
    ...
    handle.stop()
"""

from __future__ import annotations

import copy
import dataclasses
import enum
import json
import logging
import os
import select
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, List, Mapping, Optional, Tuple

from hl2ss.codecs import get_codec
from hl2ss.control import (
    CREATOR_IDS,
    IPC_HEADER,
    IPC_REPLY,
    IPC_RESERVED,
    BeginDisplayList,
    ControlTag,
    CreatePrimitive,
    EndDisplayList,
    IpcMessage,
    PrimitiveType,
    Remove,
    RemoveAll,
    SceneCommand,
    SetActive,
    SetColor,
    SetTargetMode,
    SetText,
    SetTexture,
    SetWorldTransform,
    TargetMode,
    control_param_size,
    decode_control,
    decode_scene,
    encode_version,
)
from hl2ss.device import DeviceModel, TrackingLossSchedule
from hl2ss.errors import (
    HandshakeError,
    ProtocolError,
    StartupError,
    TruncatedStreamError,
    ValidationError,
)
from hl2ss.streams import (
    DATA_PORTS,
    VLC_PORTS,
    StreamConfig,
    StreamMode,
    StreamPort,
    as_port,
    config_size,
    decode_config,
    load_pv_modes,
)
from hl2ss.utils import close_quietly
from hl2ss.wire import MAX_PAYLOAD_SIZE, encode_frame

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = os.path.join(os.path.dirname(__file__), "data", "emulator.json")

# longest sleep between checks of the stop flag
_POLL = 0.1


# ---------------------------------------------------------------- configuration

_RATE_PORTS = {
    "vlc": VLC_PORTS,
    "depth": (StreamPort.DEPTH_LONGTHROW,),
    "imu_accel": (StreamPort.IMU_ACCEL,),
    "imu_gyro": (StreamPort.IMU_GYRO,),
    "imu_mag": (StreamPort.IMU_MAG,),
    "spatial_input": (StreamPort.SPATIAL_INPUT,),
}


@dataclass
class EmulatorConfig:
    r"""Emulator settings, usually loaded from JSON.

    Attributes:
        host: address to bind
        clock_multiplier: simulated seconds per wall-clock second
        rates: frames per second by stream name (``vlc``, ``depth``,
            ``imu_accel``, ``imu_gyro``, ``imu_mag``, ``spatial_input``)
        pv_modes_file: PV whitelist, default ``hl2ss/data/pv_modes.txt``
        tracking_loss: ``[start, end]`` intervals of simulated seconds
        version: server version quadruple
        handshake_timeout: seconds to wait for a complete configuration
        codec: payload codec id for video and audio
    """

    host: str = "127.0.0.1"
    clock_multiplier: float = 1.0
    rates: Dict[str, float] = field(default_factory=dict)
    pv_modes_file: Optional[str] = None
    tracking_loss: List[Tuple[float, float]] = field(default_factory=list)
    version: Tuple[int, int, int, int] = (1, 0, 0, 0)
    handshake_timeout: float = 2.0
    codec: str = "raw"

    def __post_init__(self):
        for name, rate in self.rates.items():
            if name not in _RATE_PORTS:
                raise ValidationError(
                    f"unknown rate {name!r}, expected one of {sorted(_RATE_PORTS)}"
                )
            if not rate > 0:
                raise ValidationError(f"rate {name} must be positive, got {rate}")
        if "depth" in self.rates and not 1 <= self.rates["depth"] <= 5:
            raise ValidationError(f"depth rate must be 1-5 fps, got {self.rates['depth']}")
        if not self.clock_multiplier > 0:
            raise ValidationError(
                f"clock_multiplier must be positive, got {self.clock_multiplier}"
            )
        self.version = tuple(int(v) for v in self.version)
        if len(self.version) != 4 or not all(0 <= v < 2**16 for v in self.version):
            raise ValidationError(f"version must be 4 u16 values, got {self.version}")
        self.tracking_loss = [tuple(interval) for interval in self.tracking_loss]
        get_codec(self.codec)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "EmulatorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValidationError(f"unknown emulator config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(dict(values)))

    @classmethod
    def from_file(cls, path: Optional[str] = None) -> "EmulatorConfig":
        if path is None:
            path = DEFAULT_CONFIG_FILE
        with open(path, "r") as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}: {e}") from None
        return cls.from_dict(values)

    def port_rates(self) -> Dict[StreamPort, float]:
        return {port: rate for name, rate in self.rates.items() for port in _RATE_PORTS[name]}

    def device(self) -> DeviceModel:
        return DeviceModel(
            rates=self.port_rates(),
            clock_multiplier=self.clock_multiplier,
            tracking_loss=TrackingLossSchedule(self.tracking_loss),
            version=self.version,
            codec=get_codec(self.codec),
        )


# ----------------------------------------------------------------- handshake


class SessionAction(enum.Enum):
    STREAM = 0
    CALIBRATION = 1
    REJECT = 2


@dataclass(frozen=True)
class HandshakeDecision:
    action: SessionAction
    config: Optional[StreamConfig] = None
    reason: str = ""

    @property
    def include_pose(self) -> bool:
        return self.config is not None and self.config.mode == StreamMode.MODE_1


def handle_handshake(
    port: StreamPort,
    data: bytes,
    pv_modes: Optional[FrozenSet[Tuple[int, int, int]]] = None,
) -> HandshakeDecision:
    r"""Decide what a stream session does with the configuration bytes it
    received.

    Mode 0 and 1 stream (with a pose trailer in Mode 1), Mode 2 sends the
    calibration blob then closes, and anything unsupported or malformed is
    rejected by closing the connection.
    """
    try:
        cfg = decode_config(port, data, pv_modes)
    except (ProtocolError, ValidationError) as e:
        return HandshakeDecision(SessionAction.REJECT, reason=str(e))
    if cfg.mode == StreamMode.MODE_2:
        return HandshakeDecision(SessionAction.CALIBRATION, cfg)
    return HandshakeDecision(SessionAction.STREAM, cfg)


def handle_control(device: DeviceModel, data: bytes) -> Optional[bytes]:
    r"""Apply one complete remote configuration command; returns the reply
    bytes for Get Version, else ``None``.

    Raises:
        ProtocolError: unknown tag or malformed command
    """
    cmd = decode_control(data)
    if cmd.tag == ControlTag.GET_VERSION:
        return encode_version(device.version)
    device.apply_control(cmd)
    return None


# -------------------------------------------------------------------- scene


@dataclass
class SceneObject:
    kind: str
    active: bool = True
    position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)
    scale: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    color: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    texture: bytes = b""
    text: str = ""
    font_size: float = 0.0


class SceneState:
    r"""Objects created through the remote scene interface.

    Keys start at 1 and are never reused within a run. With target mode 1
    property commands ignore their key and apply to the last created
    object.
    """

    def __init__(self):
        self.objects: Dict[int, SceneObject] = {}
        self.next_key = 1
        self.target_mode = TargetMode.USE_KEY
        self.last_key = 0
        self._lock = threading.Lock()

    def snapshot(self) -> Dict[int, SceneObject]:
        with self._lock:
            return {key: dataclasses.replace(obj) for key, obj in self.objects.items()}

    def _target(self, key: int) -> Optional[SceneObject]:
        if self.target_mode == TargetMode.USE_LAST:
            key = self.last_key
        return self.objects.get(key)

    def apply(self, cmd: SceneCommand) -> int:
        r"""Execute ``cmd``; returns the new key for creators, else 1 on
        success and 0 on failure."""
        with self._lock:
            return self._apply(cmd)

    def _apply(self, cmd: SceneCommand) -> int:
        if cmd.command_id in CREATOR_IDS:
            key = self.next_key
            self.next_key += 1
            kind = (
                PrimitiveType(cmd.type).name.lower()
                if isinstance(cmd, CreatePrimitive)
                else "text"
            )
            self.objects[key] = SceneObject(kind)
            self.last_key = key
            return key
        if isinstance(cmd, SetTargetMode):
            if cmd.mode not in TargetMode._value2member_map_:
                return 0
            self.target_mode = TargetMode(cmd.mode)
            return 1
        if isinstance(cmd, RemoveAll):
            self.objects.clear()
            return 1
        if isinstance(cmd, (BeginDisplayList, EndDisplayList)):
            return 1
        if isinstance(cmd, Remove):
            return int(self.objects.pop(cmd.key, None) is not None)
        obj = self._target(cmd.key)
        if obj is None:
            return 0
        if isinstance(cmd, SetActive):
            obj.active = bool(cmd.state)
        elif isinstance(cmd, SetWorldTransform):
            obj.position, obj.rotation, obj.scale = cmd.position, cmd.rotation, cmd.scale
        elif isinstance(cmd, SetColor):
            if not all(0.0 <= c <= 1.0 for c in cmd.rgba):
                return 0
            obj.color = tuple(cmd.rgba)
        elif isinstance(cmd, SetTexture):
            obj.texture = cmd.texture
        elif isinstance(cmd, SetText):
            if obj.kind != "text" or not all(0.0 <= c <= 1.0 for c in cmd.rgba):
                return 0
            obj.font_size, obj.color, obj.text = cmd.size, tuple(cmd.rgba), cmd.text
        return 1


def handle_ipc(scene: SceneState, msg: IpcMessage) -> int:
    r"""Execute one IPC message against ``scene`` and return the 4-byte
    reply value. Unknown ids, 3 included, are answered 0.

    Raises:
        ProtocolError: the message uses the reserved id 0xFFFFFFFF
    """
    if msg.command_id == IPC_RESERVED:
        raise ProtocolError("client sent the reserved command id 0xFFFFFFFF")
    try:
        cmd = decode_scene(msg)
    except ProtocolError as e:
        logger.info("scene command rejected: %s", e)
        return 0
    reply = scene.apply(cmd)
    logger.debug("scene %s -> %d", type(cmd).__name__, reply)
    return reply


# ------------------------------------------------------------------ sessions


class SessionClosed(Exception):
    r"""The client went away or the emulator is stopping."""


class PortServer:
    r"""Listener for one port that admits one session at a time.

    Args:
        port: TCP port
        listener: bound, listening socket
        session: callable run in its own thread for each admitted client
    """

    def __init__(self, port: int, listener: socket.socket, session: Callable):
        self.port = port
        self.listener = listener
        self.listener.settimeout(_POLL)
        self.session = session
        self.stopped = threading.Event()
        self.idle = threading.Event()
        self.idle.set()
        self.sessions_served = 0
        self._lock = threading.Lock()
        self._active: Optional[socket.socket] = None
        self._threads: List[threading.Thread] = []
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"hl2ss-accept-{port}", daemon=True
        )

    def start(self) -> None:
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self.stopped.is_set():
            try:
                conn, peer = self.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                if self._active is not None:
                    logger.info("port %d: rejected second client %s", self.port, peer)
                    close_quietly(conn)
                    continue
                self._active = conn
                self.idle.clear()
            thread = threading.Thread(
                target=self._run, args=(conn, peer), name=f"hl2ss-session-{self.port}",
                daemon=True,
            )
            self._threads = [t for t in self._threads if t.is_alive()] + [thread]
            thread.start()

    def _run(self, conn: socket.socket, peer) -> None:
        logger.info("port %d: session from %s", self.port, peer)
        try:
            self.session(conn, self)
        except SessionClosed:
            pass
        except (OSError, ProtocolError) as e:
            logger.info("port %d: session ended: %s", self.port, e)
        finally:
            close_quietly(conn)
            with self._lock:
                self._active = None
                self.sessions_served += 1
                self.idle.set()
            logger.info("port %d: session closed", self.port)

    def wait(self, conn: socket.socket, deadline: float) -> None:
        r"""Sleep until ``deadline`` (``time.monotonic``), returning early
        only by raising :class:`SessionClosed` when the client disconnects
        or the server stops."""
        while True:
            if self.stopped.is_set():
                raise SessionClosed()
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            readable, _, _ = select.select([conn], [], [], min(remaining, _POLL))
            if readable:
                try:
                    data = conn.recv(4096)
                except OSError:
                    raise SessionClosed() from None
                if not data:
                    raise SessionClosed()

    def read(self, conn: socket.socket, size: int, timeout: Optional[float] = None) -> bytes:
        r"""Read exactly ``size`` bytes, waiting at most ``timeout`` seconds
        in total (forever if ``None``) while still honoring the stop
        flag."""
        deadline = None if timeout is None else time.monotonic() + timeout
        buffer = bytearray()
        while len(buffer) < size:
            if self.stopped.is_set():
                raise SessionClosed()
            wait = _POLL
            if deadline is not None:
                wait = min(wait, deadline - time.monotonic())
                if wait <= 0:
                    raise HandshakeError(
                        f"port {self.port}: got {len(buffer)} of {size} bytes before timeout"
                    )
            readable, _, _ = select.select([conn], [], [], wait)
            if not readable:
                continue
            part = conn.recv(size - len(buffer))
            if not part:
                if buffer:
                    raise TruncatedStreamError(
                        f"port {self.port}: client closed after {len(buffer)} of {size} bytes"
                    )
                raise SessionClosed()
            buffer += part
        return bytes(buffer)

    def stop(self) -> None:
        self.stopped.set()
        close_quietly(self.listener)
        with self._lock:
            active = self._active
        if active is not None:
            try:
                active.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        self._accept_thread.join(timeout=2)
        for thread in self._threads:
            thread.join(timeout=2)


def stream_session(
    device: DeviceModel,
    port: StreamPort,
    pv_modes: FrozenSet[Tuple[int, int, int]],
    handshake_timeout: float,
) -> Callable:
    r"""Session body for a data stream port."""

    def run(conn: socket.socket, server: PortServer) -> None:
        size = config_size(port)
        try:
            data = server.read(conn, size, handshake_timeout) if size else b""
        except (HandshakeError, TruncatedStreamError) as e:
            logger.info("%s: incomplete configuration: %s", port.name, e)
            return
        decision = handle_handshake(port, data, pv_modes)
        if decision.action is SessionAction.REJECT:
            logger.info("%s: configuration rejected: %s", port.name, decision.reason)
            return
        config = decision.config
        if decision.action is SessionAction.CALIBRATION:
            conn.sendall(device.calibration_blob(port, config))
            logger.info("%s: calibration sent", port.name)
            return
        logger.info("%s: streaming in mode %d", port.name, config.mode)
        k = device.first_index(port, config)
        last = -1
        while True:
            server.wait(conn, device.due(port, k, config))
            frame = device.frame(port, k, config)
            if frame.timestamp <= last:
                raise RuntimeError(
                    f"{port.name} timestamp {frame.timestamp} after {last}"
                )
            last = frame.timestamp
            conn.sendall(encode_frame(frame, decision.include_pose))
            k += 1

    return run


def control_session(device: DeviceModel) -> Callable:
    def run(conn: socket.socket, server: PortServer) -> None:
        while True:
            tag = server.read(conn, 1)
            try:
                size = control_param_size(tag[0])
            except ProtocolError as e:
                logger.info("control: %s, closing", e)
                return
            params = server.read(conn, size) if size else b""
            reply = handle_control(device, tag + params)
            if reply is not None:
                conn.sendall(reply)

    return run


def ipc_session(scene: SceneState) -> Callable:
    def run(conn: socket.socket, server: PortServer) -> None:
        while True:
            header = server.read(conn, IPC_HEADER.size)
            command_id, size = IPC_HEADER.unpack(header)
            if command_id == IPC_RESERVED:
                logger.info("ipc: reserved command id from client, closing")
                return
            if size > MAX_PAYLOAD_SIZE:
                logger.info("ipc: %d parameter bytes exceed the limit, closing", size)
                return
            params = server.read(conn, size) if size else b""
            reply = handle_ipc(scene, IpcMessage(command_id, params))
            conn.sendall(IPC_REPLY.pack(reply))

    return run


# -------------------------------------------------------------------- serve


class EmulatorHandle:
    r"""A running emulator.

    Attributes:
        config: emulator configuration
        device: the device model
        scene: remote scene state
        servers: :class:`PortServer` by port
    """

    def __init__(self, config: EmulatorConfig, device: DeviceModel, scene: SceneState,
                 servers: Dict[StreamPort, PortServer]):
        self.config = config
        self.device = device
        self.scene = scene
        self.servers = servers

    @property
    def ports(self) -> Tuple[StreamPort, ...]:
        return tuple(self.servers)

    def wait_idle(self, port: int, timeout: Optional[float] = None) -> bool:
        r"""Block until ``port`` has no active session; returns ``False`` on
        timeout."""
        return self.servers[as_port(port)].idle.wait(timeout)

    def stop(self) -> None:
        for server in self.servers.values():
            server.stop()
        logger.info("emulator stopped")

    def serve_forever(self) -> None:
        try:
            while True:
                time.sleep(1)
        finally:
            self.stop()

    def __enter__(self) -> "EmulatorHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _bind(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
        sock.listen(1)
    except OSError as e:
        sock.close()
        raise StartupError(f"cannot listen on {host}:{port}: {e}") from e
    return sock


def serve(config: Optional[EmulatorConfig] = None, device: Optional[DeviceModel] = None
          ) -> EmulatorHandle:
    r"""Start listening on all 13 ports and return a handle.

    Args:
        config: emulator configuration, default :meth:`EmulatorConfig.from_file`
        device: device model, default built from ``config``

    Raises:
        StartupError: a port could not be bound; no port is left open
    """
    if config is None:
        config = EmulatorConfig.from_file()
    if device is None:
        device = config.device()
    pv_modes = load_pv_modes(config.pv_modes_file)
    scene = SceneState()
    bodies = {port: stream_session(device, port, pv_modes, config.handshake_timeout)
              for port in DATA_PORTS}
    bodies[StreamPort.CONTROL] = control_session(device)
    bodies[StreamPort.UNITY_IPC] = ipc_session(scene)
    listeners = {}
    try:
        for port in sorted(bodies):
            listeners[port] = _bind(config.host, int(port))
    except StartupError:
        for sock in listeners.values():
            sock.close()
        raise
    servers = {port: PortServer(int(port), listeners[port], bodies[port]) for port in sorted(bodies)}
    for server in servers.values():
        server.start()
    logger.info(
        "emulator listening on %s ports %s", config.host, ", ".join(str(int(p)) for p in servers)
    )
    return EmulatorHandle(config, device, scene, servers)
