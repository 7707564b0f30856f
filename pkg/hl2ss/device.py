r"""Synthetic device model served by the emulator.

Everything here is deterministic in the frame index: the payload of frame
``k`` of a stream depends only on ``k``, the stream configuration and the
device settings snapshot, so tests can regenerate what the emulator sent.

Timestamps are simulated device time in hundreds of nanoseconds. Frame
``k`` of a stream running at ``rate`` frames per second is stamped
``epoch + floor(k * 10**7 / rate)`` and leaves at wall-clock time
``start + k / (rate * clock_multiplier)``.
"""

from __future__ import annotations

import logging
import math
import threading
import time
import numpy as np
from fractions import Fraction
from frozendict import frozendict
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

from hl2ss.calibration import (
    Calibration,
    ImuCalibration,
    PvCalibration,
    encode_calibration,
    synth_pinhole_calibration,
)
from hl2ss.codecs import (
    AUDIO_SAMPLE_RATE,
    AUDIO_SAMPLES,
    DEPTH_SHAPE,
    DepthAbImage,
    PayloadCodec,
    RawCodec,
    SigmaMask,
    encode_audio,
    encode_depth_png,
    encode_image,
)
from hl2ss.control import (
    ControlCommand,
    Exposure,
    Focus,
    MarkerState,
    TemporalDenoising,
    WhiteBalancePreset,
    WhiteBalanceValue,
)
from hl2ss.errors import UnsupportedModeError, ValidationError
from hl2ss.streams import (
    HAND_JOINT_COUNT,
    IMU_PORTS,
    IMU_SAMPLE_DTYPE,
    VALID_EYE,
    VALID_HEAD,
    VALID_LEFT,
    VALID_RIGHT,
    VLC_PORTS,
    EyeRay,
    HandJoint,
    HeadPose,
    SpatialInputFrame,
    StreamConfig,
    StreamMode,
    StreamPort,
    as_port,
    imu_batch_size,
    pack_spatial_input,
)
from hl2ss.wire import TICKS_PER_SECOND, DataFrame

logger = logging.getLogger(__name__)

DEFAULT_EPOCH = 10_000_000_000
MICROPHONE_RATE = Fraction(AUDIO_SAMPLE_RATE, AUDIO_SAMPLES)

DEFAULT_RATES = {
    **{port: Fraction(30) for port in VLC_PORTS},
    StreamPort.DEPTH_LONGTHROW: Fraction(5),
    StreamPort.IMU_ACCEL: Fraction(12),
    StreamPort.IMU_GYRO: Fraction(21),
    StreamPort.IMU_MAG: Fraction(5),
    StreamPort.MICROPHONE: MICROPHONE_RATE,
    StreamPort.SPATIAL_INPUT: Fraction(60),
}

DEFAULT_SETTINGS = frozendict(
    marker=False,
    focus=(0, 0, 0, 0, 0),
    temporal_denoising=0,
    white_balance_preset=0,
    white_balance_value=None,
    exposure=(0, 0),
)


def frame_timestamp(k: int, rate: Fraction, epoch: int = DEFAULT_EPOCH) -> int:
    r"""Timestamp of frame ``k`` of a stream running at ``rate`` fps."""
    return epoch + math.floor(Fraction(k * TICKS_PER_SECOND) / Fraction(rate))


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rigid(rotation: np.ndarray, translation: Sequence[float]) -> np.ndarray:
    r"""4x4 float32 transform with ``p' = R p + t`` (column vectors)."""
    m = np.eye(4, dtype=np.float32)
    m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


class CircularTrajectory:
    r"""Head path on a horizontal circle, always facing the circle's
    center.

    Args:
        radius: circle radius in meters
        height: y coordinate of the head in meters
        period: seconds per revolution
    """

    def __init__(self, radius: float = 0.5, height: float = 1.6, period: float = 10.0):
        self.radius = radius
        self.height = height
        self.period = period

    def angle(self, seconds: float) -> float:
        return 2 * math.pi * seconds / self.period

    def pose(self, seconds: float) -> np.ndarray:
        r"""rigNode to world transform at ``seconds`` of simulated time."""
        a = self.angle(seconds)
        position = (self.radius * math.sin(a), self.height, self.radius * math.cos(a))
        # forward (-Z of the rig) points back at the center
        return rigid(rotation_y(a), position)

    def head(self, seconds: float) -> HeadPose:
        m = self.pose(seconds).astype(np.float64)
        return HeadPose(
            tuple(float(v) for v in m[:3, 3]),
            tuple(float(v) for v in -m[:3, 2]),
            tuple(float(v) for v in m[:3, 1]),
        )


class TrackingLossSchedule:
    r"""Intervals of simulated time, in seconds since the device epoch,
    during which the device has no pose.

    Args:
        intervals: ``(start, end)`` pairs; ``start`` is inclusive, ``end``
            exclusive
    """

    def __init__(self, intervals: Sequence[Tuple[float, float]] = ()):
        self.intervals = tuple((float(a), float(b)) for a, b in intervals)
        for start, end in self.intervals:
            if not end > start:
                raise ValidationError(f"tracking loss interval ({start}, {end}) is empty")

    def lost(self, seconds: float) -> bool:
        return any(start <= seconds < end for start, end in self.intervals)


def _vlc_image(k: int, port: StreamPort) -> np.ndarray:
    v, u = np.mgrid[0:480, 0:640]
    shift = k * 4 + (int(port) - VLC_PORTS[0]) * 16
    checker = (((u + shift) // 32 + v // 32) % 2) * 128
    return (checker + v * 127 // 479).astype(np.uint8)


def depth_frame(k: int) -> Tuple[DepthAbImage, SigmaMask]:
    r"""Procedural depth scene for frame ``k``: a tilted plane with a band
    of invalid pixels on the left edge."""
    v, u = np.mgrid[0 : DEPTH_SHAPE[0], 0 : DEPTH_SHAPE[1]]
    depth = 1000 + 2 * u + ((v + 3 * k) % 50)
    ab = (u * 7 + v * 3 + k) % 4096
    sigma = np.zeros(DEPTH_SHAPE, dtype=np.uint8)
    sigma[:, :4] = 0x80
    return DepthAbImage(depth, ab), SigmaMask(sigma)


class DeviceModel:
    r"""State of the emulated device.

    Args:
        rates: frames per second for each stream except PV, whose rate comes
            from its configuration
        clock_multiplier: simulated seconds per wall-clock second
        tracking_loss: pose loss schedule
        trajectory: head path
        version: server version quadruple
        epoch: timestamp of simulated time zero
        codec: codec for video and audio payloads
    """

    def __init__(
        self,
        rates: Optional[Mapping[StreamPort, Union[int, Fraction]]] = None,
        clock_multiplier: float = 1.0,
        tracking_loss: Optional[TrackingLossSchedule] = None,
        trajectory: Optional[CircularTrajectory] = None,
        version: Tuple[int, int, int, int] = (1, 0, 0, 0),
        epoch: int = DEFAULT_EPOCH,
        codec: Optional[PayloadCodec] = None,
    ):
        if not clock_multiplier > 0:
            raise ValidationError(f"clock multiplier must be positive, got {clock_multiplier}")
        self.rates: Dict[StreamPort, Fraction] = dict(DEFAULT_RATES)
        for port, rate in (rates or {}).items():
            self.rates[as_port(port)] = Fraction(rate)
        self.clock_multiplier = clock_multiplier
        self.tracking_loss = tracking_loss or TrackingLossSchedule()
        self.trajectory = trajectory or CircularTrajectory()
        self.version = tuple(version)
        self.epoch = epoch
        self.codec = codec or RawCodec()
        self.start = time.monotonic()
        self._settings = DEFAULT_SETTINGS
        self._settings_lock = threading.Lock()
        self._cache = {}

    # -------------------------------------------------------------- clock

    def rate(self, port: StreamPort, config: Optional[StreamConfig] = None) -> Fraction:
        if port == StreamPort.PV:
            return Fraction(config.framerate)
        return self.rates[port]

    def seconds(self, timestamp: int) -> float:
        return (timestamp - self.epoch) / TICKS_PER_SECOND

    def timestamp(self, port: StreamPort, k: int, config: Optional[StreamConfig] = None) -> int:
        return frame_timestamp(k, self.rate(port, config), self.epoch)

    def first_index(self, port: StreamPort, config: Optional[StreamConfig] = None) -> int:
        r"""Index of the first frame due at or after the current simulated
        time."""
        elapsed = (time.monotonic() - self.start) * self.clock_multiplier
        return math.ceil(elapsed * self.rate(port, config))

    def due(self, port: StreamPort, k: int, config: Optional[StreamConfig] = None) -> float:
        r"""Wall-clock (``time.monotonic``) time at which frame ``k`` is
        sent."""
        return self.start + float(k / self.rate(port, config)) / self.clock_multiplier

    # -------------------------------------------------------------- poses

    def pose(self, timestamp: int) -> np.ndarray:
        r"""Mode 1 pose at ``timestamp``; the zero matrix while tracking is
        lost."""
        seconds = self.seconds(timestamp)
        if self.tracking_loss.lost(seconds):
            return np.zeros((4, 4), dtype=np.float32)
        return self.trajectory.pose(seconds)

    # ----------------------------------------------------------- settings

    def apply_control(self, cmd: ControlCommand) -> None:
        r"""Store a remote configuration setting."""
        if isinstance(cmd, MarkerState):
            update = {"marker": bool(cmd.enable)}
        elif isinstance(cmd, Focus):
            update = {"focus": (cmd.mode, cmd.range, cmd.distance, cmd.value, cmd.fallback)}
        elif isinstance(cmd, TemporalDenoising):
            update = {"temporal_denoising": cmd.mode}
        elif isinstance(cmd, WhiteBalancePreset):
            update = {"white_balance_preset": cmd.preset}
        elif isinstance(cmd, WhiteBalanceValue):
            update = {"white_balance_value": cmd.value}
        elif isinstance(cmd, Exposure):
            update = {"exposure": (cmd.mode, cmd.value)}
        else:
            return
        with self._settings_lock:
            self._settings = frozendict({**self._settings, **update})
        logger.info("settings updated: %s", update)

    def settings(self) -> frozendict:
        r"""Immutable snapshot of the remote configuration settings."""
        with self._settings_lock:
            return self._settings

    # ------------------------------------------------------- calibrations

    def calibration(self, port: StreamPort, config: Optional[StreamConfig] = None) -> Calibration:
        r"""Synthetic calibration for ``port``; PV intrinsics follow the
        configured resolution."""
        port = as_port(port)
        if port in VLC_PORTS:
            index = VLC_PORTS.index(port)
            angle = (-1.2, -0.4, 0.4, 1.2)[index]
            extrinsics = rigid(rotation_y(angle), (0.05 * (index - 1.5), 0.0, 0.0))
            return synth_pinhole_calibration(640, 480, 450.0, 450.0, 320.0, 240.0, extrinsics)
        if port == StreamPort.DEPTH_LONGTHROW:
            extrinsics = rigid(np.eye(3), (0.0, -0.02, 0.0))
            return synth_pinhole_calibration(320, 288, 210.0, 210.0, 160.0, 144.0, extrinsics)
        if port in (StreamPort.IMU_ACCEL, StreamPort.IMU_GYRO):
            return ImuCalibration(rigid(np.eye(3), (0.0, 0.0, -0.01 * (port - 3805))))
        if port == StreamPort.PV:
            f = 0.8 * config.width
            cx, cy = config.width / 2, config.height / 2
            projection = np.eye(4, dtype=np.float32)
            projection[0, 0] = 2 * f / config.width
            projection[1, 1] = 2 * f / config.height
            return PvCalibration((f, f), (cx, cy), projection=projection)
        raise UnsupportedModeError(f"{port.name} has no calibration data")

    def calibration_blob(self, port: StreamPort, config: Optional[StreamConfig] = None) -> bytes:
        key = ("calibration", port, None if port != StreamPort.PV else (config.width, config.height))
        if key not in self._cache:
            self._cache[key] = encode_calibration(self.calibration(port, config))
        return self._cache[key]

    # ----------------------------------------------------------- payloads

    def payload(self, port: StreamPort, k: int, config: StreamConfig) -> bytes:
        r"""Payload of frame ``k`` of ``port``."""
        port = as_port(port)
        timestamp = self.timestamp(port, k, config)
        if port in VLC_PORTS:
            return encode_image(_vlc_image(k, port), self.codec)
        if port == StreamPort.DEPTH_LONGTHROW:
            return encode_depth_png(*depth_frame(k))
        if port == StreamPort.PV:
            return encode_image(self.pv_image(k, config), self.codec)
        if port == StreamPort.MICROPHONE:
            return encode_audio(self.audio(k), self.codec)
        if port in IMU_PORTS:
            return self.imu_batch(port, timestamp).tobytes()
        return pack_spatial_input(self.spatial_input(timestamp))

    def frame(self, port: StreamPort, k: int, config: StreamConfig) -> DataFrame:
        r"""Frame ``k`` of ``port`` as sent in ``config.mode``; Mode 1
        frames carry the pose."""
        timestamp = self.timestamp(port, k, config)
        pose = self.pose(timestamp) if config.mode == StreamMode.MODE_1 else None
        return DataFrame(timestamp, self.payload(port, k, config), pose)

    def pv_image(self, k: int, config: StreamConfig) -> np.ndarray:
        key = ("pv", config.width, config.height)
        if key not in self._cache:
            v, u = np.mgrid[0 : config.height, 0 : config.width]
            base = np.empty((config.height, config.width, 3), dtype=np.uint8)
            base[..., 0] = u * 255 // max(config.width - 1, 1)
            base[..., 1] = v * 255 // max(config.height - 1, 1)
            base[..., 2] = 0
            self._cache[key] = base
        image = np.roll(self._cache[key], k * 4, axis=1)
        # exposure brightens the blue channel so settings are visible in the stream
        _, exposure = self.settings()["exposure"]
        image[..., 2] = min(255, exposure // 100)
        return image

    def audio(self, k: int) -> np.ndarray:
        n = np.arange(k * AUDIO_SAMPLES, (k + 1) * AUDIO_SAMPLES)
        t = n / AUDIO_SAMPLE_RATE
        left = 0.5 * np.sin(2 * np.pi * 440.0 * t)
        right = 0.25 * np.sin(2 * np.pi * 660.0 * t)
        return np.stack((left, right)).astype(np.float32)

    def imu_batch(self, port: StreamPort, timestamp: int) -> np.ndarray:
        n = imu_batch_size(port)
        period_ns = 1e9 / float(self.rates[port] * n)
        batch = np.zeros(n, dtype=IMU_SAMPLE_DTYPE)
        i = np.arange(n)
        sensor_ns = timestamp * 100 - ((n - 1 - i) * period_ns).astype(np.int64)
        batch["sensor_timestamp"] = sensor_ns
        batch["frame_timestamp"] = timestamp
        phase = 2 * np.pi * sensor_ns / 1e9
        if port == StreamPort.IMU_ACCEL:
            batch["x"] = 0.1 * np.sin(phase)
            batch["y"] = -9.81
            batch["z"] = 0.1 * np.cos(phase)
        elif port == StreamPort.IMU_GYRO:
            batch["y"] = 360.0 / self.trajectory.period
            batch["x"] = np.sin(phase)
        else:
            batch["x"], batch["y"], batch["z"] = 0.3, 0.1, -0.4
        return batch

    def spatial_input(self, timestamp: int) -> SpatialInputFrame:
        seconds = self.seconds(timestamp)
        if self.tracking_loss.lost(seconds):
            return SpatialInputFrame()
        head = self.trajectory.head(seconds)
        eye = EyeRay(head.position, head.forward)
        valid = VALID_HEAD | VALID_EYE
        step = int(seconds)
        hands = {}
        for bit, side, offset in ((VALID_LEFT, "left", -0.2), (VALID_RIGHT, "right", 0.2)):
            if step % 4 in ((0, 1) if side == "left" else (1, 2)):
                valid |= bit
                hands[side] = tuple(
                    HandJoint(
                        (0.0, 0.0, 0.0, 1.0),
                        (offset, 1.2 + 0.01 * j, -0.4),
                        0.01,
                        2,
                    )
                    for j in range(HAND_JOINT_COUNT)
                )
        return SpatialInputFrame(valid, head, eye, **hands)
