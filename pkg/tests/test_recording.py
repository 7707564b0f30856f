import hl2ss.recording as recording
from hl2ss.errors import ProtocolError, TruncatedStreamError, UnsupportedModeError, ValidationError
from hl2ss.streams import ModeConfig, StreamMode, StreamPort, encode_config
from hl2ss.wire import DataFrame, encode_frame

import io
import os
import numpy as np
import pytest

rng = np.random.default_rng(5)
pose = np.arange(16, dtype=np.float32).reshape(4, 4)
pose[3] = (0, 0, 0, 1)
frames = [
    DataFrame(1000 + 10 * i, rng.integers(0, 256, size=100 + i, dtype=np.uint8).tobytes())
    for i in range(20)
]
posed = [
    DataFrame(f.timestamp, f.payload, pose if i % 3 else np.zeros((4, 4), np.float32))
    for i, f in enumerate(frames)
]
depth_blob = encode_config(StreamPort.DEPTH_LONGTHROW, ModeConfig(StreamMode.MODE_1))


def container(frame_list, port=StreamPort.IMU_GYRO, mode=0, config=b"\x00"):
    buffer = io.BytesIO()
    with recording.RecordingWriter(buffer, port, mode, config) as writer:
        for frame in frame_list:
            writer.write(frame)
    return buffer.getvalue()


def test_write_read(tmp_path):
    path = os.path.join(tmp_path, "gyro.hl2r")
    with recording.RecordingWriter(path, StreamPort.IMU_GYRO, 0, b"\x00") as writer:
        for frame in frames:
            writer.write(frame)
        assert writer.count == 20
    rec = recording.read_recording(path)
    assert rec.header == recording.RecordingHeader(StreamPort.IMU_GYRO, StreamMode.MODE_0, b"\x00")
    assert rec.frames == frames
    assert len(rec) == 20


def test_layout():
    data = container(frames[:2])
    assert data[:8] == recording.MAGIC
    assert data[8:15] == (3807).to_bytes(2, "little") + bytes([0, 1, 0, 0, 0])
    assert data[15:16] == b"\x00"
    assert data[16:] == encode_frame(frames[0], False) + encode_frame(frames[1], False) + (
        2
    ).to_bytes(8, "little")


def test_replay_byte_exact():
    data = container(frames)
    assert recording.replay(recording.read_recording(data)) == data
    data = container(posed, StreamPort.DEPTH_LONGTHROW, 1, depth_blob)
    assert recording.replay(recording.read_recording(data)) == data
    assert recording.replay(recording.read_recording(container([]))) == container([])


def test_mode1_poses():
    rec = recording.read_recording(container(posed, StreamPort.DEPTH_LONGTHROW, 1, depth_blob))
    assert rec.header.include_pose
    assert [f.is_valid_pose() for f in rec.frames] == [bool(i % 3) for i in range(20)]
    assert np.array_equal(rec.frames[1].pose, pose)
    wire = list(recording.iter_wire(rec))
    assert wire[0] == encode_frame(posed[0], True)


def test_file_object_source():
    data = container(frames)
    assert recording.read_recording(io.BytesIO(data)).frames == frames


def test_bad_magic():
    data = bytearray(container(frames))
    data[0:8] = b"NOTAREC!"
    with pytest.raises(ProtocolError):
        recording.read_recording(bytes(data))


def test_bad_header():
    data = bytearray(container(frames))
    data[8:10] = (1234).to_bytes(2, "little")
    with pytest.raises(ProtocolError):
        recording.read_recording(bytes(data))


def test_truncated():
    data = container(frames)
    with pytest.raises(TruncatedStreamError):
        recording.read_recording(data[:10])
    with pytest.raises(TruncatedStreamError):
        # drop part of the last frame, keep a trailer-sized tail
        recording.read_recording(data[:-20] + data[-8:])


def test_count_mismatch():
    data = container(frames)
    with pytest.raises(ProtocolError):
        recording.read_recording(data[:-8] + (19).to_bytes(8, "little"))


def test_mode2_rejected():
    with pytest.raises(ValidationError):
        recording.RecordingWriter(io.BytesIO(), StreamPort.VLC_LEFTFRONT, 2)
    with pytest.raises(UnsupportedModeError):
        recording.RecordingWriter(io.BytesIO(), StreamPort.MICROPHONE, 1)


def test_writer_size():
    buffer = io.BytesIO()
    with recording.RecordingWriter(buffer, StreamPort.DEPTH_LONGTHROW, 1, depth_blob) as writer:
        for frame in posed:
            writer.write(frame)
        assert writer.size == len(buffer.getvalue())
    assert writer.size == len(buffer.getvalue())


def test_aborted_capture_has_no_trailer():
    buffer = io.BytesIO()
    with pytest.raises(ConnectionResetError):
        with recording.RecordingWriter(buffer, StreamPort.IMU_GYRO, 0, b"\x00") as writer:
            for frame in frames[:5]:
                writer.write(frame)
            raise ConnectionResetError("peer went away")
    data = buffer.getvalue()
    assert data == container(frames[:5])[:-8]
    with pytest.raises(ProtocolError):
        recording.read_recording(data)
