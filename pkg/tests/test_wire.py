import hl2ss.wire as wire
from hl2ss.errors import ProtocolError, TruncatedStreamError, ValidationError

import random
import struct
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

identity = np.eye(4, dtype=np.float32)
lost = np.zeros((4, 4), dtype=np.float32)

frames_no_pose = [
    wire.DataFrame(0, b""),
    wire.DataFrame(1, b"\x00"),
    wire.DataFrame(2**64 - 1, bytes(range(256))),
]
frames_pose = [
    wire.DataFrame(5, b"abc", identity),
    wire.DataFrame(6, b"", lost),
]


def test_header_layout():
    data = wire.encode_frame(wire.DataFrame(0x0102030405060708, b"xy"), False)
    assert data == bytes.fromhex("0807060504030201") + struct.pack("<I", 2) + b"xy"
    assert wire.HEADER_SIZE == 12


def test_pose_trailer_is_row_major():
    pose = np.arange(16, dtype=np.float32).reshape(4, 4)
    data = wire.encode_frame(wire.DataFrame(1, b"", pose), True)
    assert len(data) == 12 + 64
    assert struct.unpack("<16f", data[12:]) == tuple(range(16))


def test_empty_payload():
    data = wire.encode_frame(wire.DataFrame(7, b""), False)
    assert len(data) == 12
    assert wire.parse_frames(data, False) == [wire.DataFrame(7, b"")]


def test_roundtrip_fixed():
    data = b"".join(wire.encode_frame(f, False) for f in frames_no_pose)
    assert wire.parse_frames(data, False) == frames_no_pose
    data = b"".join(wire.encode_frame(f, True) for f in frames_pose)
    parsed = wire.parse_frames(data, True)
    assert parsed == frames_pose
    assert parsed[0].is_valid_pose()
    assert not parsed[1].is_valid_pose()


def test_pose_required():
    with pytest.raises(ValidationError):
        wire.encode_frame(wire.DataFrame(1, b"a"), True)


def test_timestamp_range():
    with pytest.raises(ValidationError):
        wire.encode_frame(wire.DataFrame(2**64, b""), False)
    with pytest.raises(ValidationError):
        wire.encode_frame(wire.DataFrame(-1, b""), False)


def test_byte_by_byte_feed():
    data = b"".join(wire.encode_frame(f, True) for f in frames_pose)
    unpacker = wire.FrameUnpacker(expect_pose=True)
    out = []
    for i in range(len(data)):
        out.extend(unpacker.feed(data[i : i + 1]))
    assert out == frames_pose
    assert unpacker.pending == 0


def test_partial_frame_not_emitted():
    data = wire.encode_frame(wire.DataFrame(3, b"hello"), False)
    unpacker = wire.FrameUnpacker(expect_pose=False)
    assert unpacker.feed(data[:-1]) == []
    assert unpacker.pending == len(data) - 1
    assert unpacker.feed(data[-1:]) == [wire.DataFrame(3, b"hello")]


def test_oversize_payload():
    unpacker = wire.FrameUnpacker(expect_pose=False, max_payload=16)
    with pytest.raises(ProtocolError):
        unpacker.feed(struct.pack("<QI", 0, 17))


def test_truncated_buffer():
    data = wire.encode_frame(wire.DataFrame(3, b"hello"), False)
    with pytest.raises(TruncatedStreamError):
        wire.parse_frames(data[:-2], False)


def test_pose_validity():
    assert wire.pose_is_valid(identity)
    assert not wire.pose_is_valid(lost)
    assert not wire.pose_is_valid(None)


frame_strategy = st.builds(
    wire.DataFrame,
    st.integers(0, 2**64 - 1),
    st.binary(max_size=2048),
    st.just(None),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(frame_strategy, max_size=20), st.booleans(), st.randoms())
def test_random_chunking(frames, with_pose, rnd):
    if with_pose:
        frames = [
            wire.DataFrame(f.timestamp, f.payload, identity if i % 2 else lost)
            for i, f in enumerate(frames)
        ]
    data = b"".join(wire.encode_frame(f, with_pose) for f in frames)
    unpacker = wire.FrameUnpacker(expect_pose=with_pose)
    out = []
    i = 0
    while i < len(data):
        step = rnd.randint(1, 4096)
        out.extend(unpacker.feed(data[i : i + step]))
        i += step
    assert out == frames
    assert unpacker.pending == 0


def test_large_random_stream():
    rng = random.Random(0)
    payloads = np.random.default_rng(0)
    frames = [
        wire.DataFrame(
            rng.getrandbits(64),
            payloads.bytes(rng.choice([0, 1, 100, 65536, 1 << 20])),
            identity,
        )
        for _ in range(50)
    ]
    data = b"".join(wire.encode_frame(f, True) for f in frames)
    unpacker = wire.FrameUnpacker(expect_pose=True)
    out = []
    i = 0
    while i < len(data):
        step = rng.randint(1, 1 << 16)
        out.extend(unpacker.feed(data[i : i + step]))
        i += step
    assert out == frames


@pytest.mark.parametrize("with_pose", [False, True])
def test_ten_thousand_frames(with_pose):
    rng = random.Random(10)
    payloads = np.random.default_rng(10)
    frames = []
    for i in range(10**4):
        # mostly small payloads, one in 200 up to 1 MiB
        size = rng.randint(0, 1 << 20) if rng.random() < 0.005 else rng.randint(0, 4096)
        pose = (identity if i % 3 else lost) if with_pose else None
        frames.append(wire.DataFrame(rng.getrandbits(64), payloads.bytes(size), pose))
    data = b"".join(wire.encode_frame(f, with_pose) for f in frames)
    assert len(data) == sum(wire.encoded_size(f, with_pose) for f in frames)
    unpacker = wire.FrameUnpacker(expect_pose=with_pose)
    out = []
    i = 0
    while i < len(data):
        step = rng.randint(1, 1 << 14)
        out.extend(wire.feed_unpacker(unpacker, data[i : i + step]))
        i += step
    assert out == frames
    assert unpacker.pending == 0


def test_feed_unpacker_split_header():
    frame = wire.DataFrame(42, b"payload")
    data = wire.encode_frame(frame, False)
    unpacker = wire.FrameUnpacker(expect_pose=False)
    assert wire.feed_unpacker(unpacker, data[:5]) == []
    assert wire.feed_unpacker(unpacker, data[5:12]) == []
    assert unpacker.pending == 12
    assert wire.feed_unpacker(unpacker, data[12:]) == [frame]
    assert wire.feed_unpacker(unpacker, data + data) == [frame, frame]
    assert unpacker.pending == 0
