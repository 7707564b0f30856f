r"""Stream identities, operating modes, configuration handshake blobs, and
payload layouts for the IMU and Spatial Input streams."""

from __future__ import annotations

import enum
import os
import struct
import numpy as np
from dataclasses import dataclass, field
from typing import FrozenSet, List, NamedTuple, Optional, Sequence, Tuple, Union

from hl2ss.errors import ProtocolError, UnsupportedModeError, ValidationError


class StreamPort(enum.IntEnum):
    VLC_LEFTFRONT = 3800
    VLC_LEFTLEFT = 3801
    VLC_RIGHTFRONT = 3802
    VLC_RIGHTRIGHT = 3803
    DEPTH_LONGTHROW = 3805
    IMU_ACCEL = 3806
    IMU_GYRO = 3807
    IMU_MAG = 3808
    CONTROL = 3809
    PV = 3810
    MICROPHONE = 3811
    SPATIAL_INPUT = 3812
    UNITY_IPC = 3816


VLC_PORTS = (
    StreamPort.VLC_LEFTFRONT,
    StreamPort.VLC_LEFTLEFT,
    StreamPort.VLC_RIGHTFRONT,
    StreamPort.VLC_RIGHTRIGHT,
)
IMU_PORTS = (StreamPort.IMU_ACCEL, StreamPort.IMU_GYRO, StreamPort.IMU_MAG)
DATA_PORTS = VLC_PORTS + (StreamPort.DEPTH_LONGTHROW,) + IMU_PORTS + (
    StreamPort.PV,
    StreamPort.MICROPHONE,
    StreamPort.SPATIAL_INPUT,
)
ALL_PORTS = tuple(StreamPort)


class StreamMode(enum.IntEnum):
    MODE_0 = 0
    MODE_1 = 1
    MODE_2 = 2


class VideoProfile(enum.IntEnum):
    H264_BASE = 0
    H264_MAIN = 1
    H264_HIGH = 2
    H265_MAIN = 3


class AudioProfile(enum.IntEnum):
    AAC_12000 = 0
    AAC_16000 = 1
    AAC_20000 = 2
    AAC_24000 = 3


_SUPPORTED_MODES = {
    **{port: frozenset(StreamMode) for port in VLC_PORTS},
    StreamPort.DEPTH_LONGTHROW: frozenset(StreamMode),
    StreamPort.IMU_ACCEL: frozenset(StreamMode),
    StreamPort.IMU_GYRO: frozenset(StreamMode),
    StreamPort.IMU_MAG: frozenset({StreamMode.MODE_0, StreamMode.MODE_1}),
    StreamPort.PV: frozenset(StreamMode),
    StreamPort.MICROPHONE: frozenset({StreamMode.MODE_0}),
    StreamPort.SPATIAL_INPUT: frozenset({StreamMode.MODE_0}),
}


def as_port(port: Union[int, StreamPort]) -> StreamPort:
    try:
        return StreamPort(port)
    except ValueError:
        raise ValidationError(f"{port} is not a known port") from None


def supported_modes(port: Union[int, StreamPort]) -> FrozenSet[StreamMode]:
    r"""Operating modes available on a data stream port.

    Raises:
        ValidationError: ``port`` is the control or IPC port
    """
    port = as_port(port)
    if port not in _SUPPORTED_MODES:
        raise ValidationError(f"{port.name} ({int(port)}) is not a data stream")
    return _SUPPORTED_MODES[port]


def check_mode(port: Union[int, StreamPort], mode: int) -> StreamMode:
    port = as_port(port)
    try:
        mode = StreamMode(mode)
    except ValueError:
        raise UnsupportedModeError(f"{mode} is not a stream mode") from None
    if mode not in supported_modes(port):
        raise UnsupportedModeError(
            f"{port.name} supports modes "
            f"{sorted(int(m) for m in supported_modes(port))}, got {int(mode)}"
        )
    return mode


# ------------------------------------------------------------------ configs

VLC_RESOLUTION = (640, 480, 30)

DEFAULT_PV_MODES_FILE = os.path.join(os.path.dirname(__file__), "data", "pv_modes.txt")


def load_pv_modes(path: Optional[str] = None) -> FrozenSet[Tuple[int, int, int]]:
    r"""Read the accepted PV ``(width, height, framerate)`` triples.

    One ``WxH@FPS`` entry per line; blank lines and ``#`` comments are
    ignored. The shipped default is a stand-in list, not a statement about
    any particular device.

    Args:
        path: whitelist file, default ``hl2ss/data/pv_modes.txt``
    """
    if path is None:
        path = DEFAULT_PV_MODES_FILE
    modes = set()
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                size, fps = line.split("@")
                width, height = size.lower().split("x")
                modes.add((int(width), int(height), int(fps)))
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: expected WxH@FPS, got {line!r}"
                ) from None
    return frozenset(modes)


@dataclass(frozen=True)
class VideoConfig:
    mode: StreamMode = StreamMode.MODE_0
    width: int = 640
    height: int = 480
    framerate: int = 30
    profile: VideoProfile = VideoProfile.H265_MAIN
    bitrate: int = 1 * 1024 * 1024


@dataclass(frozen=True)
class ModeConfig:
    r"""Configuration of the RM Depth and RM IMU streams: the mode only."""

    mode: StreamMode = StreamMode.MODE_0


@dataclass(frozen=True)
class AudioConfig:
    profile: AudioProfile = AudioProfile.AAC_24000

    @property
    def mode(self) -> StreamMode:
        return StreamMode.MODE_0


@dataclass(frozen=True)
class SpatialInputConfig:
    @property
    def mode(self) -> StreamMode:
        return StreamMode.MODE_0


StreamConfig = Union[VideoConfig, ModeConfig, AudioConfig, SpatialInputConfig]

_VIDEO = struct.Struct("<BHHBBI")


def config_size(port: Union[int, StreamPort]) -> int:
    r"""Length in bytes of the handshake blob a client sends on ``port``."""
    port = as_port(port)
    if port in VLC_PORTS or port == StreamPort.PV:
        return _VIDEO.size
    if port == StreamPort.SPATIAL_INPUT:
        return 0
    if port in _SUPPORTED_MODES:
        return 1
    raise ValidationError(f"{port.name} ({int(port)}) is not a data stream")


def default_config(
    port: Union[int, StreamPort], mode: int = StreamMode.MODE_0
) -> StreamConfig:
    r"""A valid configuration for ``port`` in ``mode`` with default
    settings."""
    port = as_port(port)
    mode = check_mode(port, mode)
    if port in VLC_PORTS:
        return VideoConfig(mode=mode)
    if port == StreamPort.PV:
        return VideoConfig(mode=mode, width=1920, height=1080, framerate=30,
                           bitrate=5 * 1024 * 1024)
    if port == StreamPort.MICROPHONE:
        return AudioConfig()
    if port == StreamPort.SPATIAL_INPUT:
        return SpatialInputConfig()
    return ModeConfig(mode=mode)


def validate_config(
    port: Union[int, StreamPort],
    cfg: StreamConfig,
    pv_modes: Optional[FrozenSet[Tuple[int, int, int]]] = None,
) -> StreamConfig:
    r"""Check that ``cfg`` is acceptable for ``port``.

    Args:
        port: data stream port
        cfg: stream-specific configuration
        pv_modes: PV whitelist, default :func:`load_pv_modes`

    Raises:
        ValidationError: wrong config type or out-of-range field
        UnsupportedModeError: mode not available on ``port``
    """
    port = as_port(port)
    if port in VLC_PORTS or port == StreamPort.PV:
        if not isinstance(cfg, VideoConfig):
            raise ValidationError(f"{port.name} requires a VideoConfig, got {cfg!r}")
        check_mode(port, cfg.mode)
        triple = (cfg.width, cfg.height, cfg.framerate)
        if port in VLC_PORTS and triple != VLC_RESOLUTION:
            raise ValidationError(
                f"VLC width, height and framerate must be {VLC_RESOLUTION}, got {triple}"
            )
        if port == StreamPort.PV:
            if pv_modes is None:
                pv_modes = load_pv_modes()
            if triple not in pv_modes:
                raise ValidationError(f"PV mode {triple} is not in the PV mode whitelist")
        try:
            VideoProfile(cfg.profile)
        except ValueError:
            raise ValidationError(f"video profile must be 0-3, got {cfg.profile}") from None
        if not 0 <= cfg.bitrate < 2**32:
            raise ValidationError(f"bitrate {cfg.bitrate} does not fit in u32")
    elif port == StreamPort.MICROPHONE:
        if not isinstance(cfg, AudioConfig):
            raise ValidationError(f"MICROPHONE requires an AudioConfig, got {cfg!r}")
        try:
            AudioProfile(cfg.profile)
        except ValueError:
            raise ValidationError(f"audio profile must be 0-3, got {cfg.profile}") from None
    elif port == StreamPort.SPATIAL_INPUT:
        if not isinstance(cfg, SpatialInputConfig):
            raise ValidationError(
                f"SPATIAL_INPUT requires a SpatialInputConfig, got {cfg!r}"
            )
    elif port in _SUPPORTED_MODES:
        if not isinstance(cfg, ModeConfig):
            raise ValidationError(f"{port.name} requires a ModeConfig, got {cfg!r}")
        check_mode(port, cfg.mode)
    else:
        raise ValidationError(f"{port.name} ({int(port)}) is not a data stream")
    return cfg


def encode_config(
    port: Union[int, StreamPort],
    cfg: StreamConfig,
    pv_modes: Optional[FrozenSet[Tuple[int, int, int]]] = None,
) -> bytes:
    r"""Serialize the handshake blob a client sends when opening ``port``.

    Video ports get the 11-byte ``mode, width, height, framerate, profile,
    bitrate`` string; depth and IMU a single mode byte; the microphone a
    single preset byte; Spatial Input nothing.
    """
    port = as_port(port)
    validate_config(port, cfg, pv_modes)
    if isinstance(cfg, VideoConfig):
        return _VIDEO.pack(
            int(cfg.mode), cfg.width, cfg.height, cfg.framerate, int(cfg.profile),
            cfg.bitrate,
        )
    if isinstance(cfg, ModeConfig):
        return bytes([int(cfg.mode)])
    if isinstance(cfg, AudioConfig):
        return bytes([int(cfg.profile)])
    return b""


def decode_config(
    port: Union[int, StreamPort],
    data: bytes,
    pv_modes: Optional[FrozenSet[Tuple[int, int, int]]] = None,
) -> StreamConfig:
    r"""Inverse of :func:`encode_config`, used on the device side.

    Raises:
        ProtocolError: ``data`` has the wrong length
        ValidationError: the decoded config is not acceptable
    """
    port = as_port(port)
    expected = config_size(port)
    if len(data) != expected:
        raise ProtocolError(
            f"{port.name} config must be {expected} bytes, got {len(data)}"
        )
    if port in VLC_PORTS or port == StreamPort.PV:
        mode, width, height, framerate, profile, bitrate = _VIDEO.unpack(data)
        try:
            cfg = VideoConfig(
                StreamMode(mode), width, height, framerate, VideoProfile(profile), bitrate
            )
        except ValueError as e:
            raise ValidationError(f"bad {port.name} config: {e}") from None
    elif port == StreamPort.MICROPHONE:
        try:
            cfg = AudioConfig(AudioProfile(data[0]))
        except ValueError as e:
            raise ValidationError(f"bad MICROPHONE config: {e}") from None
    elif port == StreamPort.SPATIAL_INPUT:
        cfg = SpatialInputConfig()
    else:
        try:
            cfg = ModeConfig(StreamMode(data[0]))
        except ValueError as e:
            raise ValidationError(f"bad {port.name} config: {e}") from None
    return validate_config(port, cfg, pv_modes)


# ---------------------------------------------------------------------- IMU

IMU_BATCH_SIZE = {
    StreamPort.IMU_ACCEL: 93,
    StreamPort.IMU_GYRO: 315,
    StreamPort.IMU_MAG: 11,
}

IMU_SAMPLE_DTYPE = np.dtype(
    [
        ("sensor_timestamp", "<u8"),
        ("frame_timestamp", "<u8"),
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
    ]
)
assert IMU_SAMPLE_DTYPE.itemsize == 28


class ImuSample(NamedTuple):
    r"""One IMU measurement. Accelerometer in m/s^2, gyroscope in deg/s,
    magnetometer dimensionless."""

    sensor_timestamp_ns: int
    frame_timestamp: int
    x: float
    y: float
    z: float


def imu_batch_size(port: Union[int, StreamPort]) -> int:
    port = as_port(port)
    if port not in IMU_BATCH_SIZE:
        raise ValidationError(f"{port.name} is not an IMU stream")
    return IMU_BATCH_SIZE[port]


def pack_imu_batch(samples: Sequence[ImuSample], port: Union[int, StreamPort]) -> bytes:
    r"""Serialize one IMU data frame payload.

    Raises:
        ProtocolError: ``len(samples)`` differs from the port's batch size
    """
    expected = imu_batch_size(port)
    if len(samples) != expected:
        raise ProtocolError(
            f"{as_port(port).name} batch must hold {expected} samples, got {len(samples)}"
        )
    batch = np.array([tuple(s) for s in samples], dtype=IMU_SAMPLE_DTYPE)
    return batch.tobytes()


def imu_batch_array(payload: bytes, port: Union[int, StreamPort]) -> np.ndarray:
    r"""View an IMU payload as a structured array with fields
    ``sensor_timestamp``, ``frame_timestamp``, ``x``, ``y``, ``z``."""
    expected = imu_batch_size(port) * IMU_SAMPLE_DTYPE.itemsize
    if len(payload) != expected:
        raise ProtocolError(
            f"{as_port(port).name} payload must be {expected} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=IMU_SAMPLE_DTYPE)


def unpack_imu_batch(payload: bytes, port: Union[int, StreamPort]) -> List[ImuSample]:
    return [
        ImuSample(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4]))
        for r in imu_batch_array(payload, port)
    ]


# ------------------------------------------------------------ spatial input


class HandJointKind(enum.IntEnum):
    PALM = 0
    WRIST = 1
    THUMB_METACARPAL = 2
    THUMB_PROXIMAL = 3
    THUMB_DISTAL = 4
    THUMB_TIP = 5
    INDEX_METACARPAL = 6
    INDEX_PROXIMAL = 7
    INDEX_INTERMEDIATE = 8
    INDEX_DISTAL = 9
    INDEX_TIP = 10
    MIDDLE_METACARPAL = 11
    MIDDLE_PROXIMAL = 12
    MIDDLE_INTERMEDIATE = 13
    MIDDLE_DISTAL = 14
    MIDDLE_TIP = 15
    RING_METACARPAL = 16
    RING_PROXIMAL = 17
    RING_INTERMEDIATE = 18
    RING_DISTAL = 19
    RING_TIP = 20
    LITTLE_METACARPAL = 21
    LITTLE_PROXIMAL = 22
    LITTLE_INTERMEDIATE = 23
    LITTLE_DISTAL = 24
    LITTLE_TIP = 25


HAND_JOINT_COUNT = len(HandJointKind)

_VEC3 = ("<f4", (3,))
HEAD_POSE_DTYPE = np.dtype([("position",) + _VEC3, ("forward",) + _VEC3, ("up",) + _VEC3])
EYE_RAY_DTYPE = np.dtype([("origin",) + _VEC3, ("direction",) + _VEC3])
HAND_JOINT_DTYPE = np.dtype(
    [
        ("orientation", "<f4", (4,)),
        ("position",) + _VEC3,
        ("radius", "<f4"),
        ("accuracy", "<u4"),
    ]
)
SPATIAL_INPUT_DTYPE = np.dtype(
    [
        ("valid", "u1"),
        ("head", HEAD_POSE_DTYPE),
        ("eye", EYE_RAY_DTYPE),
        ("left", HAND_JOINT_DTYPE, (HAND_JOINT_COUNT,)),
        ("right", HAND_JOINT_DTYPE, (HAND_JOINT_COUNT,)),
    ]
)
SPATIAL_INPUT_SIZE = SPATIAL_INPUT_DTYPE.itemsize
assert HEAD_POSE_DTYPE.itemsize == 36
assert EYE_RAY_DTYPE.itemsize == 24
assert HAND_JOINT_DTYPE.itemsize == 36
assert SPATIAL_INPUT_SIZE == 1933

VALID_HEAD = 0x01
VALID_EYE = 0x02
VALID_LEFT = 0x04
VALID_RIGHT = 0x08

Vec3 = Tuple[float, float, float]


def _vec(a) -> tuple:
    return tuple(float(x) for x in a)


class HeadPose(NamedTuple):
    r"""Head position and orientation. Up is +Y and forward is -Z in the
    device convention."""

    position: Vec3 = (0.0, 0.0, 0.0)
    forward: Vec3 = (0.0, 0.0, 0.0)
    up: Vec3 = (0.0, 0.0, 0.0)

    def right(self) -> Vec3:
        return _vec(np.cross(np.asarray(self.up), -np.asarray(self.forward)))


class EyeRay(NamedTuple):
    r"""Gaze ray. No length is transmitted."""

    origin: Vec3 = (0.0, 0.0, 0.0)
    direction: Vec3 = (0.0, 0.0, 0.0)


class HandJoint(NamedTuple):
    orientation: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # x, y, z, w
    position: Vec3 = (0.0, 0.0, 0.0)
    radius: float = 0.0
    accuracy: int = 0


Hand = Tuple[HandJoint, ...]

ZERO_HAND: Hand = tuple(HandJoint() for _ in range(HAND_JOINT_COUNT))


@dataclass(frozen=True)
class SpatialInputFrame:
    r"""Spatial Input payload.

    Attributes:
        valid: bit 0 head, bit 1 eye, bit 2 left hand, bit 3 right hand
        head: head pose
        eye: eye gaze ray
        left: 26 joints in :class:`HandJointKind` order
        right: 26 joints in :class:`HandJointKind` order

    Fields whose valid bit is clear carry no meaning.
    """

    valid: int = 0
    head: HeadPose = HeadPose()
    eye: EyeRay = EyeRay()
    left: Hand = field(default=ZERO_HAND)
    right: Hand = field(default=ZERO_HAND)

    @property
    def head_valid(self) -> bool:
        return bool(self.valid & VALID_HEAD)

    @property
    def eye_valid(self) -> bool:
        return bool(self.valid & VALID_EYE)

    @property
    def left_valid(self) -> bool:
        return bool(self.valid & VALID_LEFT)

    @property
    def right_valid(self) -> bool:
        return bool(self.valid & VALID_RIGHT)


def _pack_hand(joints: np.ndarray, hand: Hand) -> None:
    if len(hand) != HAND_JOINT_COUNT:
        raise ValidationError(f"a hand has {HAND_JOINT_COUNT} joints, got {len(hand)}")
    for i, joint in enumerate(hand):
        joints[i] = (
            tuple(joint.orientation), tuple(joint.position), joint.radius,
            joint.accuracy,
        )


def _unpack_hand(record) -> Hand:
    return tuple(
        HandJoint(_vec(j["orientation"]), _vec(j["position"]), float(j["radius"]),
                  int(j["accuracy"]))
        for j in record
    )


def pack_spatial_input(frame: SpatialInputFrame) -> bytes:
    r"""Serialize a Spatial Input payload (1933 bytes). Fields whose valid
    bit is clear are written as zeros."""
    if not 0 <= frame.valid <= 0xFF:
        raise ValidationError(f"valid must fit in u8, got {frame.valid}")
    record = np.zeros(1, dtype=SPATIAL_INPUT_DTYPE)
    record["valid"][0] = frame.valid
    if frame.head_valid:
        record["head"][0] = tuple(tuple(v) for v in frame.head)
    if frame.eye_valid:
        record["eye"][0] = tuple(tuple(v) for v in frame.eye)
    if frame.left_valid:
        _pack_hand(record["left"][0], frame.left)
    if frame.right_valid:
        _pack_hand(record["right"][0], frame.right)
    return record.tobytes()


def unpack_spatial_input(payload: bytes) -> SpatialInputFrame:
    if len(payload) != SPATIAL_INPUT_SIZE:
        raise ProtocolError(
            f"Spatial Input payload must be {SPATIAL_INPUT_SIZE} bytes, got {len(payload)}"
        )
    record = np.frombuffer(payload, dtype=SPATIAL_INPUT_DTYPE)[0]
    head = record["head"]
    eye = record["eye"]
    return SpatialInputFrame(
        valid=int(record["valid"]),
        head=HeadPose(_vec(head["position"]), _vec(head["forward"]), _vec(head["up"])),
        eye=EyeRay(_vec(eye["origin"]), _vec(eye["direction"])),
        left=_unpack_hand(record["left"]),
        right=_unpack_hand(record["right"]),
    )
