r"""Command encodings for the remote configuration port (3809) and the
Unity IPC port (3816), including the remote scene vocabulary."""

from __future__ import annotations

import enum
import struct
from dataclasses import astuple, dataclass
from typing import ClassVar, Dict, Tuple, Type, Union

from hl2ss.errors import ProtocolError, ValidationError

U32_MAX = 2**32 - 1

# -------------------------------------------------------- remote configuration

WHITE_BALANCE_STEP = 25
EXPOSURE_STEP = 10


class ControlTag(enum.IntEnum):
    MARKER_STATE = 0
    FOCUS = 1
    TEMPORAL_DENOISING = 2
    WHITE_BALANCE_PRESET = 3
    WHITE_BALANCE_VALUE = 4
    EXPOSURE = 5
    GET_VERSION = 6


@dataclass(frozen=True)
class MarkerState:
    enable: int = 1

    tag: ClassVar[ControlTag] = ControlTag.MARKER_STATE
    layout: ClassVar[struct.Struct] = struct.Struct("<B")


@dataclass(frozen=True)
class Focus:
    mode: int = 0
    range: int = 0
    distance: int = 0
    value: int = 0
    fallback: int = 0

    tag: ClassVar[ControlTag] = ControlTag.FOCUS
    layout: ClassVar[struct.Struct] = struct.Struct("<5I")


@dataclass(frozen=True)
class TemporalDenoising:
    mode: int = 0

    tag: ClassVar[ControlTag] = ControlTag.TEMPORAL_DENOISING
    layout: ClassVar[struct.Struct] = struct.Struct("<I")


@dataclass(frozen=True)
class WhiteBalancePreset:
    preset: int = 0

    tag: ClassVar[ControlTag] = ControlTag.WHITE_BALANCE_PRESET
    layout: ClassVar[struct.Struct] = struct.Struct("<I")


@dataclass(frozen=True)
class WhiteBalanceValue:
    r"""White balance in natural units; must be a multiple of 25."""

    value: int = 0

    tag: ClassVar[ControlTag] = ControlTag.WHITE_BALANCE_VALUE
    layout: ClassVar[struct.Struct] = struct.Struct("<I")


@dataclass(frozen=True)
class Exposure:
    r"""Exposure mode and value; the value is in natural units and must be a
    multiple of 10."""

    mode: int = 0
    value: int = 0

    tag: ClassVar[ControlTag] = ControlTag.EXPOSURE
    layout: ClassVar[struct.Struct] = struct.Struct("<II")


@dataclass(frozen=True)
class GetVersion:
    tag: ClassVar[ControlTag] = ControlTag.GET_VERSION
    layout: ClassVar[struct.Struct] = struct.Struct("<")


ControlCommand = Union[
    MarkerState, Focus, TemporalDenoising, WhiteBalancePreset, WhiteBalanceValue,
    Exposure, GetVersion,
]

CONTROL_COMMANDS: Dict[int, Type] = {
    cls.tag: cls
    for cls in (
        MarkerState, Focus, TemporalDenoising, WhiteBalancePreset, WhiteBalanceValue,
        Exposure, GetVersion,
    )
}

VERSION = struct.Struct("<4H")
VERSION_SIZE = VERSION.size  # 8


def control_param_size(tag: int) -> int:
    r"""Number of parameter bytes following the tag byte.

    Raises:
        ProtocolError: unknown tag
    """
    try:
        return CONTROL_COMMANDS[tag].layout.size
    except KeyError:
        raise ProtocolError(f"unknown control command {tag}") from None


def _divide(value: int, step: int, what: str) -> int:
    if value < 0 or value % step:
        raise ValidationError(f"{what} must be a non-negative multiple of {step}, got {value}")
    return value // step


def encode_control(cmd: ControlCommand) -> bytes:
    r"""Serialize ``cmd`` as the tag byte followed by its little-endian
    parameters.

    White balance values go on the wire divided by 25 and exposure values
    divided by 10, so both have a step size of 1.

    Raises:
        ValidationError: value not divisible by its step, or out of range
    """
    if type(cmd) not in CONTROL_COMMANDS.values():
        raise ValidationError(f"not a control command: {cmd!r}")
    params = astuple(cmd)
    if isinstance(cmd, WhiteBalanceValue):
        params = (_divide(cmd.value, WHITE_BALANCE_STEP, "white balance"),)
    elif isinstance(cmd, Exposure):
        params = (cmd.mode, _divide(cmd.value, EXPOSURE_STEP, "exposure"))
    try:
        return bytes([cmd.tag]) + cmd.layout.pack(*params)
    except struct.error as e:
        raise ValidationError(f"{cmd!r} does not fit its wire layout: {e}") from None


def decode_control(data: bytes) -> ControlCommand:
    r"""Inverse of :func:`encode_control`; restores natural white balance and
    exposure values.

    Raises:
        ProtocolError: unknown tag or wrong parameter length
    """
    if not data:
        raise ProtocolError("empty control command")
    tag = data[0]
    size = control_param_size(tag)
    if len(data) != 1 + size:
        raise ProtocolError(
            f"control command {tag} needs {size} parameter bytes, got {len(data) - 1}"
        )
    cls = CONTROL_COMMANDS[tag]
    params = cls.layout.unpack(data[1:])
    if cls is WhiteBalanceValue:
        params = (params[0] * WHITE_BALANCE_STEP,)
    elif cls is Exposure:
        params = (params[0], params[1] * EXPOSURE_STEP)
    return cls(*params)


def encode_version(version: Tuple[int, int, int, int]) -> bytes:
    return VERSION.pack(*version)


def decode_version(data: bytes) -> Tuple[int, int, int, int]:
    if len(data) != VERSION_SIZE:
        raise ProtocolError(f"version reply must be {VERSION_SIZE} bytes, got {len(data)}")
    return VERSION.unpack(data)


# ------------------------------------------------------------------ Unity IPC

IPC_HEADER = struct.Struct("<II")
IPC_RESERVED = 0xFFFFFFFF
IPC_REPLY = struct.Struct("<I")
IPC_REPLY_SIZE = IPC_REPLY.size


@dataclass(frozen=True)
class IpcMessage:
    command_id: int
    params: bytes = b""


def encode_ipc(msg: IpcMessage) -> bytes:
    r"""Serialize ``msg`` as ``u32 id, u32 size, params``.

    Raises:
        ValidationError: ``command_id`` is the reserved value 0xFFFFFFFF
    """
    if msg.command_id == IPC_RESERVED:
        raise ValidationError("command id 0xFFFFFFFF is reserved")
    if not 0 <= msg.command_id <= U32_MAX:
        raise ValidationError(f"command id {msg.command_id} does not fit in u32")
    return IPC_HEADER.pack(msg.command_id, len(msg.params)) + bytes(msg.params)


def decode_ipc(data: bytes) -> IpcMessage:
    if len(data) < IPC_HEADER.size:
        raise ProtocolError(f"IPC message needs an {IPC_HEADER.size}-byte header")
    command_id, size = IPC_HEADER.unpack_from(data)
    if len(data) != IPC_HEADER.size + size:
        raise ProtocolError(
            f"IPC message announces {size} parameter bytes, got {len(data) - IPC_HEADER.size}"
        )
    return IpcMessage(command_id, bytes(data[IPC_HEADER.size :]))


# --------------------------------------------------------------- remote scene


class PrimitiveType(enum.IntEnum):
    SPHERE = 0
    CAPSULE = 1
    CYLINDER = 2
    CUBE = 3
    PLANE = 4
    QUAD = 5


class TargetMode(enum.IntEnum):
    USE_KEY = 0
    USE_LAST = 1


class SceneId(enum.IntEnum):
    CREATE_PRIMITIVE = 0
    SET_ACTIVE = 1
    SET_WORLD_TRANSFORM = 2
    SET_COLOR = 4
    SET_TEXTURE = 5
    CREATE_TEXT = 6
    SET_TEXT = 7
    REMOVE = 16
    REMOVE_ALL = 17
    BEGIN_DISPLAY_LIST = 18
    END_DISPLAY_LIST = 19
    SET_TARGET_MODE = 20


CREATOR_IDS = frozenset({SceneId.CREATE_PRIMITIVE, SceneId.CREATE_TEXT})

Vector3 = Tuple[float, float, float]
Quaternion = Tuple[float, float, float, float]
Rgba = Tuple[float, float, float, float]


def _check_rgba(rgba) -> None:
    if len(rgba) != 4 or not all(0.0 <= c <= 1.0 for c in rgba):
        raise ValidationError(f"rgba must be 4 values in [0, 1], got {tuple(rgba)}")


@dataclass(frozen=True)
class CreatePrimitive:
    type: int = PrimitiveType.CUBE

    command_id: ClassVar[SceneId] = SceneId.CREATE_PRIMITIVE

    def params(self) -> bytes:
        if self.type not in PrimitiveType._value2member_map_:
            raise ValidationError(f"primitive type must be 0-5, got {self.type}")
        return struct.pack("<I", self.type)

    @classmethod
    def from_params(cls, data: bytes):
        (kind,) = struct.unpack("<I", data)
        return cls(kind)


@dataclass(frozen=True)
class SetActive:
    key: int
    state: int = 1

    command_id: ClassVar[SceneId] = SceneId.SET_ACTIVE

    def params(self) -> bytes:
        return struct.pack("<II", self.key, self.state)

    @classmethod
    def from_params(cls, data: bytes):
        return cls(*struct.unpack("<II", data))


@dataclass(frozen=True)
class SetWorldTransform:
    r"""Position, quaternion rotation ``(x, y, z, w)`` and scale."""

    key: int
    position: Vector3 = (0.0, 0.0, 0.0)
    rotation: Quaternion = (0.0, 0.0, 0.0, 1.0)
    scale: Vector3 = (1.0, 1.0, 1.0)

    command_id: ClassVar[SceneId] = SceneId.SET_WORLD_TRANSFORM

    def params(self) -> bytes:
        return struct.pack("<I3f4f3f", self.key, *self.position, *self.rotation, *self.scale)

    @classmethod
    def from_params(cls, data: bytes):
        v = struct.unpack("<I3f4f3f", data)
        return cls(v[0], v[1:4], v[4:8], v[8:11])


@dataclass(frozen=True)
class SetColor:
    key: int
    rgba: Rgba = (1.0, 1.0, 1.0, 1.0)

    command_id: ClassVar[SceneId] = SceneId.SET_COLOR

    def params(self) -> bytes:
        _check_rgba(self.rgba)
        return struct.pack("<I4f", self.key, *self.rgba)

    @classmethod
    def from_params(cls, data: bytes):
        v = struct.unpack("<I4f", data)
        return cls(v[0], v[1:5])


@dataclass(frozen=True)
class SetTexture:
    r"""Texture as the bytes of a JPG or PNG file."""

    key: int
    texture: bytes = b""

    command_id: ClassVar[SceneId] = SceneId.SET_TEXTURE

    def params(self) -> bytes:
        return struct.pack("<I", self.key) + bytes(self.texture)

    @classmethod
    def from_params(cls, data: bytes):
        if len(data) < 4:
            raise ProtocolError("SetTexture needs a key")
        (key,) = struct.unpack_from("<I", data)
        return cls(key, bytes(data[4:]))


@dataclass(frozen=True)
class CreateText:
    command_id: ClassVar[SceneId] = SceneId.CREATE_TEXT

    def params(self) -> bytes:
        return b""

    @classmethod
    def from_params(cls, data: bytes):
        if data:
            raise ProtocolError(f"CreateText takes no parameters, got {len(data)} bytes")
        return cls()


_SET_TEXT = struct.Struct("<If4f")


@dataclass(frozen=True)
class SetText:
    r"""Text content, font size and color. The string is UTF-8 without a
    terminator."""

    key: int
    size: float = 0.2
    rgba: Rgba = (1.0, 1.0, 1.0, 1.0)
    text: str = ""

    command_id: ClassVar[SceneId] = SceneId.SET_TEXT

    def params(self) -> bytes:
        _check_rgba(self.rgba)
        return _SET_TEXT.pack(self.key, self.size, *self.rgba) + self.text.encode("utf-8")

    @classmethod
    def from_params(cls, data: bytes):
        if len(data) < _SET_TEXT.size:
            raise ProtocolError(f"SetText needs at least {_SET_TEXT.size} bytes")
        v = _SET_TEXT.unpack_from(data)
        try:
            text = bytes(data[_SET_TEXT.size :]).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"SetText string is not UTF-8: {e}") from None
        return cls(v[0], v[1], v[2:6], text)


@dataclass(frozen=True)
class Remove:
    key: int

    command_id: ClassVar[SceneId] = SceneId.REMOVE

    def params(self) -> bytes:
        return struct.pack("<I", self.key)

    @classmethod
    def from_params(cls, data: bytes):
        return cls(*struct.unpack("<I", data))


@dataclass(frozen=True)
class _NoParams:
    def params(self) -> bytes:
        return b""

    @classmethod
    def from_params(cls, data: bytes):
        if data:
            raise ProtocolError(f"{cls.__name__} takes no parameters, got {len(data)} bytes")
        return cls()


@dataclass(frozen=True)
class RemoveAll(_NoParams):
    command_id: ClassVar[SceneId] = SceneId.REMOVE_ALL


@dataclass(frozen=True)
class BeginDisplayList(_NoParams):
    command_id: ClassVar[SceneId] = SceneId.BEGIN_DISPLAY_LIST


@dataclass(frozen=True)
class EndDisplayList(_NoParams):
    command_id: ClassVar[SceneId] = SceneId.END_DISPLAY_LIST


@dataclass(frozen=True)
class SetTargetMode:
    mode: int = TargetMode.USE_KEY

    command_id: ClassVar[SceneId] = SceneId.SET_TARGET_MODE

    def params(self) -> bytes:
        return struct.pack("<I", self.mode)

    @classmethod
    def from_params(cls, data: bytes):
        return cls(*struct.unpack("<I", data))


SceneCommand = Union[
    CreatePrimitive, SetActive, SetWorldTransform, SetColor, SetTexture, CreateText,
    SetText, Remove, RemoveAll, BeginDisplayList, EndDisplayList, SetTargetMode,
]

SCENE_COMMANDS: Dict[int, Type] = {
    cls.command_id: cls
    for cls in (
        CreatePrimitive, SetActive, SetWorldTransform, SetColor, SetTexture, CreateText,
        SetText, Remove, RemoveAll, BeginDisplayList, EndDisplayList, SetTargetMode,
    )
}


def encode_scene(cmd: SceneCommand) -> IpcMessage:
    r"""Map a remote scene command to its IPC message.

    Raises:
        ValidationError: bad primitive type, rgba out of range, or a value
            that does not fit its field
    """
    if type(cmd) not in SCENE_COMMANDS.values():
        raise ValidationError(f"not a scene command: {cmd!r}")
    try:
        return IpcMessage(int(cmd.command_id), cmd.params())
    except struct.error as e:
        raise ValidationError(f"{cmd!r} does not fit its wire layout: {e}") from None


def decode_scene(msg: IpcMessage) -> SceneCommand:
    r"""Inverse of :func:`encode_scene`.

    Raises:
        ProtocolError: unassigned command id (3 included) or malformed
            parameters
    """
    cls = SCENE_COMMANDS.get(msg.command_id)
    if cls is None:
        raise ProtocolError(f"unknown scene command id {msg.command_id}")
    try:
        cmd = cls.from_params(msg.params)
    except struct.error as e:
        raise ProtocolError(f"bad parameters for {cls.__name__}: {e}") from None
    if isinstance(cmd, CreatePrimitive) and cmd.type not in PrimitiveType._value2member_map_:
        raise ProtocolError(f"primitive type must be 0-5, got {cmd.type}")
    return cmd


def decode_reply(data: bytes) -> int:
    if len(data) != IPC_REPLY_SIZE:
        raise ProtocolError(f"IPC reply must be {IPC_REPLY_SIZE} bytes, got {len(data)}")
    return IPC_REPLY.unpack(data)[0]
