r"""Mode 2 calibration payloads.

Each sensor's calibration arrives as one fixed-size blob of little-endian
float32 values, matrices row-major:

========== ==================================================== ==========
sensor     layout                                               bytes
========== ==================================================== ==========
VLC        uv2xy 480x640x2, extrinsics 4x4                      2,457,664
Depth      uv2xy 288x320x2, extrinsics 4x4, scale               737,348
IMU        extrinsics 4x4                                       64
PV         focal 2, principal 2, radial 3, tangential 2,        100
           projection 4x4
========== ==================================================== ==========

The uv2xy tables store the ``(x, y)`` pair innermost: ``uv2xy[v, u]`` is the
point on the camera's z=1 plane seen by pixel ``(u, v)``.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from hl2ss.errors import ProtocolError, UnsupportedModeError, ValidationError
from hl2ss.streams import StreamPort, VLC_PORTS, as_port
from hl2ss.utils import as_matrix4

VLC_SHAPE = (480, 640)
DEPTH_SHAPE = (288, 320)

_F32 = np.dtype("<f4")


def _identity() -> np.ndarray:
    return np.eye(4, dtype=np.float32)


def _lut_bytes(shape) -> int:
    return shape[0] * shape[1] * 2 * _F32.itemsize


VLC_CALIBRATION_SIZE = _lut_bytes(VLC_SHAPE) + 64
DEPTH_CALIBRATION_SIZE = _lut_bytes(DEPTH_SHAPE) + 64 + 4
IMU_CALIBRATION_SIZE = 64
PV_CALIBRATION_SIZE = (2 + 2 + 3 + 2 + 16) * 4


def _check_lut(uv2xy, shape) -> np.ndarray:
    uv2xy = np.asarray(uv2xy, dtype=np.float32)
    if uv2xy.shape != shape + (2,):
        raise ValidationError(f"uv2xy must have shape {shape + (2,)}, got {uv2xy.shape}")
    return uv2xy


@dataclass(frozen=True, eq=False)
class VlcCalibration:
    r"""VLC camera calibration.

    Attributes:
        uv2xy: 480x640x2 image-to-unit-plane table
        extrinsics: 4x4 sensor to rigNode transform
    """

    uv2xy: np.ndarray
    extrinsics: np.ndarray = field(default_factory=_identity)

    def __post_init__(self):
        object.__setattr__(self, "uv2xy", _check_lut(self.uv2xy, VLC_SHAPE))
        object.__setattr__(self, "extrinsics", as_matrix4(self.extrinsics, "extrinsics"))

    def __eq__(self, other):
        if not isinstance(other, VlcCalibration):
            return NotImplemented
        return np.array_equal(self.uv2xy, other.uv2xy) and np.array_equal(
            self.extrinsics, other.extrinsics
        )


@dataclass(frozen=True, eq=False)
class DepthCalibration:
    r"""Depth Long Throw calibration.

    Attributes:
        uv2xy: 288x320x2 image-to-unit-plane table
        extrinsics: 4x4 sensor to rigNode transform
        scale: depth units per meter
    """

    uv2xy: np.ndarray
    extrinsics: np.ndarray = field(default_factory=_identity)
    scale: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "uv2xy", _check_lut(self.uv2xy, DEPTH_SHAPE))
        object.__setattr__(self, "extrinsics", as_matrix4(self.extrinsics, "extrinsics"))
        object.__setattr__(self, "scale", float(np.float32(self.scale)))
        if not self.scale > 0:
            raise ValidationError(f"depth scale must be positive, got {self.scale}")

    def __eq__(self, other):
        if not isinstance(other, DepthCalibration):
            return NotImplemented
        return (
            np.array_equal(self.uv2xy, other.uv2xy)
            and np.array_equal(self.extrinsics, other.extrinsics)
            and self.scale == other.scale
        )


@dataclass(frozen=True, eq=False)
class ImuCalibration:
    extrinsics: np.ndarray = field(default_factory=_identity)

    def __post_init__(self):
        object.__setattr__(self, "extrinsics", as_matrix4(self.extrinsics, "extrinsics"))

    def __eq__(self, other):
        if not isinstance(other, ImuCalibration):
            return NotImplemented
        return np.array_equal(self.extrinsics, other.extrinsics)


@dataclass(frozen=True, eq=False)
class PvCalibration:
    r"""PV camera intrinsics.

    Attributes:
        focal: ``(fx, fy)`` in pixels
        principal: ``(cx, cy)`` in pixels
        radial: ``(k1, k2, k3)``
        tangential: ``(p1, p2)``
        projection: 4x4 matrix, stored verbatim and never interpreted
    """

    focal: np.ndarray
    principal: np.ndarray
    radial: np.ndarray = field(default_factory=lambda: np.zeros(3, np.float32))
    tangential: np.ndarray = field(default_factory=lambda: np.zeros(2, np.float32))
    projection: np.ndarray = field(default_factory=_identity)

    _SIZES = {"focal": 2, "principal": 2, "radial": 3, "tangential": 2}

    def __post_init__(self):
        for name, size in self._SIZES.items():
            value = np.asarray(getattr(self, name), dtype=np.float32).reshape(-1)
            if value.shape != (size,):
                raise ValidationError(f"{name} must have {size} values, got {value.size}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "projection", as_matrix4(self.projection, "projection"))

    def intrinsics(self) -> np.ndarray:
        r"""3x3 camera matrix ``[[fx, 0, cx], [0, fy, cy], [0, 0, 1]]``."""
        fx, fy = self.focal
        cx, cy = self.principal
        return np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1]], dtype=np.float64)

    def distortion(self) -> np.ndarray:
        r"""Coefficients in OpenCV order ``(k1, k2, p1, p2, k3)``."""
        k1, k2, k3 = self.radial
        p1, p2 = self.tangential
        return np.array([k1, k2, p1, p2, k3], dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, PvCalibration):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("focal", "principal", "radial", "tangential", "projection")
        )


Calibration = Union[VlcCalibration, DepthCalibration, ImuCalibration, PvCalibration]


def calibration_size(port: Union[int, StreamPort]) -> int:
    r"""Size in bytes of the Mode 2 blob served on ``port``.

    Raises:
        UnsupportedModeError: ``port`` has no calibration transfer
    """
    port = as_port(port)
    if port in VLC_PORTS:
        return VLC_CALIBRATION_SIZE
    if port == StreamPort.DEPTH_LONGTHROW:
        return DEPTH_CALIBRATION_SIZE
    if port in (StreamPort.IMU_ACCEL, StreamPort.IMU_GYRO):
        return IMU_CALIBRATION_SIZE
    if port == StreamPort.PV:
        return PV_CALIBRATION_SIZE
    raise UnsupportedModeError(f"{port.name} has no calibration data")


def _f32(values) -> bytes:
    return np.asarray(values, dtype=_F32).tobytes(order="C")


def encode_calibration(c: Calibration) -> bytes:
    r"""Serialize a calibration value into its Mode 2 blob."""
    if isinstance(c, VlcCalibration):
        return _f32(c.uv2xy) + _f32(c.extrinsics)
    if isinstance(c, DepthCalibration):
        return _f32(c.uv2xy) + _f32(c.extrinsics) + _f32([c.scale])
    if isinstance(c, ImuCalibration):
        return _f32(c.extrinsics)
    if isinstance(c, PvCalibration):
        return b"".join(
            _f32(v) for v in (c.focal, c.principal, c.radial, c.tangential, c.projection)
        )
    raise ValidationError(f"not a calibration value: {type(c).__name__}")


def parse_calibration(port: Union[int, StreamPort], blob: bytes) -> Calibration:
    r"""Parse the Mode 2 blob received from ``port``.

    Raises:
        UnsupportedModeError: ``port`` has no calibration transfer
        ProtocolError: ``blob`` has the wrong length
    """
    port = as_port(port)
    expected = calibration_size(port)
    if len(blob) != expected:
        raise ProtocolError(
            f"{port.name} calibration must be {expected} bytes, got {len(blob)}"
        )
    values = np.frombuffer(blob, dtype=_F32).astype(np.float32)
    if port in VLC_PORTS or port == StreamPort.DEPTH_LONGTHROW:
        shape = VLC_SHAPE if port in VLC_PORTS else DEPTH_SHAPE
        n = shape[0] * shape[1] * 2
        uv2xy = values[:n].reshape(shape + (2,))
        extrinsics = values[n : n + 16].reshape(4, 4)
        if port in VLC_PORTS:
            return VlcCalibration(uv2xy, extrinsics)
        return DepthCalibration(uv2xy, extrinsics, float(values[n + 16]))
    if port == StreamPort.PV:
        return PvCalibration(
            values[0:2], values[2:4], values[4:7], values[7:9], values[9:25].reshape(4, 4)
        )
    return ImuCalibration(values.reshape(4, 4))


def pinhole_lut(
    width: int,
    height: int,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    radial: Sequence[float] = (),
) -> np.ndarray:
    r"""Image-to-unit-plane table of a pinhole camera.

    With ``radial`` coefficients ``(k1, k2, ...)`` each entry is scaled by
    ``1 + k1 r^2 + k2 r^4 + ...`` where ``r`` is the distance of the ideal
    entry from the optical axis, which models a lens with radial distortion.

    Raises:
        ValidationError: ``fx`` or ``fy`` is zero
    """
    if fx == 0 or fy == 0:
        raise ValidationError(f"focal lengths must be nonzero, got fx={fx}, fy={fy}")
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    x = (u - cx) / fx
    y = (v - cy) / fy
    if len(radial):
        r2 = x * x + y * y
        gain = 1 + sum(k * r2 ** (i + 1) for i, k in enumerate(radial))
        x = x * gain
        y = y * gain
    return np.stack((x, y), axis=-1).astype(np.float32)


def synth_pinhole_calibration(
    width: int,
    height: int,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    extrinsics: Optional[np.ndarray] = None,
    scale: float = 1000.0,
    radial: Sequence[float] = (),
) -> Union[VlcCalibration, DepthCalibration]:
    r"""Build an ideal pinhole calibration for a VLC (640x480) or depth
    (320x288) camera.

    Args:
        width: image width, selects the sensor
        height: image height
        fx: horizontal focal length in pixels
        fy: vertical focal length in pixels
        cx: principal point column
        cy: principal point row
        extrinsics: sensor to rigNode transform, default identity
        scale: depth units per meter (depth only)
        radial: optional radial terms, see :func:`pinhole_lut`

    Raises:
        ValidationError: zero focal length or unsupported image size
    """
    lut = pinhole_lut(width, height, fx, fy, cx, cy, radial)
    if extrinsics is None:
        extrinsics = _identity()
    if (height, width) == VLC_SHAPE:
        return VlcCalibration(lut, extrinsics)
    if (height, width) == DEPTH_SHAPE:
        return DepthCalibration(lut, extrinsics, scale)
    raise ValidationError(
        f"no LUT-calibrated sensor has size {width}x{height}; "
        f"expected 640x480 (VLC) or 320x288 (depth)"
    )


def describe_calibration(c: Calibration) -> str:
    r"""Human-readable summary written next to downloaded blobs."""
    lines = [type(c).__name__]
    with np.printoptions(precision=6, suppress=True):
        if isinstance(c, PvCalibration):
            lines.append(f"focal: {c.focal[0]:.6f} {c.focal[1]:.6f}")
            lines.append(f"principal: {c.principal[0]:.6f} {c.principal[1]:.6f}")
            lines.append("radial: " + " ".join(f"{k:.6f}" for k in c.radial))
            lines.append("tangential: " + " ".join(f"{p:.6f}" for p in c.tangential))
            lines.append(f"projection:\n{c.projection}")
        else:
            if not isinstance(c, ImuCalibration):
                h, w = c.uv2xy.shape[:2]
                lines.append(f"uv2xy: {w}x{h}")
                lines.append(f"uv2xy[0, 0]: {c.uv2xy[0, 0]}")
                lines.append(f"uv2xy[{h - 1}, {w - 1}]: {c.uv2xy[-1, -1]}")
            if isinstance(c, DepthCalibration):
                lines.append(f"scale: {c.scale:.6f}")
            lines.append(f"extrinsics:\n{c.extrinsics}")
    return "\n".join(lines) + "\n"
