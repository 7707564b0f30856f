r"""Payload codecs.

The RM Depth Long Throw payload is a lossless PNG carrying 16-bit depth and
16-bit active brightness as four 8-bit channels. Video and audio payloads
pass through a :class:`PayloadCodec`; only :class:`RawCodec` ships, standing
in for the H264/HEVC/AAC encoders of a real device.
"""

from __future__ import annotations

import abc
import struct
import cv2
import numpy as np
from dataclasses import dataclass
from typing import Dict, NamedTuple

from hl2ss.errors import CodecError, ValidationError
from hl2ss.utils import _check_same_shape

DEPTH_WIDTH = 320
DEPTH_HEIGHT = 288
DEPTH_SHAPE = (DEPTH_HEIGHT, DEPTH_WIDTH)


@dataclass(frozen=True, eq=False)
class DepthAbImage:
    r"""Paired depth and active-brightness images.

    Attributes:
        depth: 288x320 uint16, millimeters, 0 is invalid
        ab: 288x320 uint16 active brightness
    """

    depth: np.ndarray
    ab: np.ndarray

    def __post_init__(self):
        for name in ("depth", "ab"):
            value = np.asarray(getattr(self, name))
            if value.shape != DEPTH_SHAPE:
                raise ValidationError(
                    f"{name} must have shape {DEPTH_SHAPE}, got {value.shape}"
                )
            object.__setattr__(self, name, value.astype(np.uint16, copy=False))

    def __eq__(self, other) -> bool:
        if not isinstance(other, DepthAbImage):
            return NotImplemented
        return np.array_equal(self.depth, other.depth) and np.array_equal(
            self.ab, other.ab
        )


class SigmaMask(NamedTuple):
    r"""288x320 uint8 sigma channel; nonzero marks an invalid depth
    pixel."""

    sigma: np.ndarray


@_check_same_shape
def apply_sigma_mask(depth: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    r"""Return a copy of ``depth`` with every pixel whose sigma is nonzero
    set to 0."""
    return np.where(np.asarray(sigma) != 0, 0, depth).astype(np.uint16)


def encode_depth_png(img: DepthAbImage, mask: SigmaMask = None) -> bytes:
    r"""Pack depth and AB into one 320x288 RGBA PNG.

    Channel 0 is the depth low byte, channel 1 the depth high byte, channel
    2 the AB low byte and channel 3 the AB high byte.

    Args:
        img: depth and AB images
        mask: sigma channel; pixels with nonzero sigma get depth 0

    Raises:
        ValidationError: the mask does not match the image dimensions
    """
    depth = img.depth
    if mask is not None:
        depth = apply_sigma_mask(depth, np.asarray(mask.sigma))
    rgba = np.empty(DEPTH_SHAPE + (4,), dtype=np.uint8)
    rgba[..., 0] = depth & 0xFF
    rgba[..., 1] = depth >> 8
    rgba[..., 2] = img.ab & 0xFF
    rgba[..., 3] = img.ab >> 8
    # OpenCV takes 4-channel input as BGRA
    ok, png = cv2.imencode(".png", cv2.cvtColor(rgba, cv2.COLOR_RGBA2BGRA))
    if not ok:
        raise CodecError("PNG encoder failed")
    return png.tobytes()


def decode_depth_png(payload: bytes) -> DepthAbImage:
    r"""Inverse of :func:`encode_depth_png`.

    Raises:
        CodecError: the payload is not a 320x288 four-channel 8-bit PNG
    """
    buffer = np.frombuffer(payload, dtype=np.uint8)
    bgra = cv2.imdecode(buffer, cv2.IMREAD_UNCHANGED) if buffer.size else None
    if bgra is None:
        raise CodecError(f"payload of {len(payload)} bytes is not a decodable PNG")
    if bgra.dtype != np.uint8 or bgra.ndim != 3 or bgra.shape[2] != 4:
        raise CodecError(
            f"depth PNG must be 8-bit with 4 channels, got {bgra.dtype} {bgra.shape}"
        )
    if bgra.shape[:2] != DEPTH_SHAPE:
        raise CodecError(
            f"depth PNG must be {DEPTH_WIDTH}x{DEPTH_HEIGHT}, "
            f"got {bgra.shape[1]}x{bgra.shape[0]}"
        )
    rgba = cv2.cvtColor(bgra, cv2.COLOR_BGRA2RGBA).astype(np.uint16)
    depth = rgba[..., 0] | (rgba[..., 1] << 8)
    ab = rgba[..., 2] | (rgba[..., 3] << 8)
    return DepthAbImage(depth, ab)


class RawFrame(NamedTuple):
    r"""Uncompressed frame as handed to and returned by a
    :class:`PayloadCodec`."""

    data: bytes
    width: int
    height: int


class PayloadCodec(abc.ABC):
    r"""Plug-in boundary for video and audio payload codecs.

    Implementations register under :attr:`codec_id` with
    :func:`register_codec`; the emulator and client pick a codec by name.
    """

    codec_id: str = ""

    @abc.abstractmethod
    def encode(self, frame: RawFrame) -> bytes:
        pass

    @abc.abstractmethod
    def decode(self, payload: bytes) -> RawFrame:
        pass


RAW_MAGIC = b"HL2SRAW0"
_RAW_HEADER = struct.Struct("<8sII")
RAW_HEADER_SIZE = _RAW_HEADER.size  # 16


class RawCodec(PayloadCodec):
    r"""Identity codec: a 16-byte header (magic, u32 width, u32 height)
    followed by the frame bytes verbatim."""

    codec_id = "raw"

    def encode(self, frame: RawFrame) -> bytes:
        if not (0 <= frame.width < 2**32 and 0 <= frame.height < 2**32):
            raise ValidationError(
                f"frame size {frame.width}x{frame.height} does not fit in u32"
            )
        return _RAW_HEADER.pack(RAW_MAGIC, frame.width, frame.height) + bytes(
            frame.data
        )

    def decode(self, payload: bytes) -> RawFrame:
        if len(payload) < RAW_HEADER_SIZE:
            raise CodecError(
                f"RAW payload needs a {RAW_HEADER_SIZE}-byte header, got {len(payload)} bytes"
            )
        magic, width, height = _RAW_HEADER.unpack_from(payload)
        if magic != RAW_MAGIC:
            raise CodecError(f"bad RAW magic {magic!r}")
        return RawFrame(bytes(payload[RAW_HEADER_SIZE:]), width, height)


_CODECS: Dict[str, PayloadCodec] = {}


def register_codec(codec: PayloadCodec) -> PayloadCodec:
    if not codec.codec_id:
        raise ValidationError(f"{type(codec).__name__} has no codec_id")
    _CODECS[codec.codec_id] = codec
    return codec


def get_codec(codec_id: str) -> PayloadCodec:
    try:
        return _CODECS[codec_id]
    except KeyError:
        raise ValidationError(
            f"unknown codec {codec_id!r}, available: {sorted(_CODECS)}"
        ) from None


register_codec(RawCodec())


def raw_codec_roundtrip(data: bytes, width: int, height: int) -> bytes:
    r"""Encode then decode ``data`` with the RAW codec, checking the header
    dimensions survive."""
    codec = get_codec(RawCodec.codec_id)
    frame = codec.decode(codec.encode(RawFrame(data, width, height)))
    if (frame.width, frame.height) != (width, height):
        raise CodecError(
            f"RAW header carried {frame.width}x{frame.height}, expected {width}x{height}"
        )
    return frame.data


def decode_image(
    payload: bytes, codec: PayloadCodec, width: int, height: int, channels: int = 1
) -> np.ndarray:
    r"""Decode a video payload into an ``height x width (x channels)`` uint8
    array.

    Raises:
        CodecError: the decoded frame has the wrong size
    """
    frame = codec.decode(payload)
    expected = width * height * channels
    if (frame.width, frame.height) != (width, height) or len(frame.data) != expected:
        raise CodecError(
            f"expected a {width}x{height}x{channels} frame, got {frame.width}x"
            f"{frame.height} with {len(frame.data)} bytes"
        )
    shape = (height, width) if channels == 1 else (height, width, channels)
    return np.frombuffer(frame.data, dtype=np.uint8).reshape(shape)


def encode_image(image: np.ndarray, codec: PayloadCodec) -> bytes:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    return codec.encode(RawFrame(image.tobytes(), image.shape[1], image.shape[0]))


AUDIO_CHANNELS = 2
AUDIO_SAMPLES = 1024
AUDIO_SAMPLE_RATE = 48000


def encode_audio(samples: np.ndarray, codec: PayloadCodec) -> bytes:
    r"""Encode one microphone packet: 2x1024 float32, channel-planar."""
    samples = np.asarray(samples, dtype="<f4")
    if samples.shape != (AUDIO_CHANNELS, AUDIO_SAMPLES):
        raise ValidationError(
            f"audio packet must have shape {(AUDIO_CHANNELS, AUDIO_SAMPLES)}, "
            f"got {samples.shape}"
        )
    return codec.encode(RawFrame(samples.tobytes(), AUDIO_SAMPLES, AUDIO_CHANNELS))


def decode_audio(payload: bytes, codec: PayloadCodec) -> np.ndarray:
    frame = codec.decode(payload)
    expected = AUDIO_CHANNELS * AUDIO_SAMPLES * 4
    if (frame.width, frame.height) != (AUDIO_SAMPLES, AUDIO_CHANNELS) or len(
        frame.data
    ) != expected:
        raise CodecError(
            f"expected a {AUDIO_CHANNELS}x{AUDIO_SAMPLES} float packet, got "
            f"{frame.height}x{frame.width} with {len(frame.data)} bytes"
        )
    return np.frombuffer(frame.data, dtype="<f4").reshape(AUDIO_CHANNELS, AUDIO_SAMPLES)
