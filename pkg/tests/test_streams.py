import hl2ss.streams as streams
from hl2ss.errors import ProtocolError, UnsupportedModeError, ValidationError
from hl2ss.streams import StreamMode, StreamPort

import os
import numpy as np
import pytest

modes = {
    StreamPort.VLC_LEFTFRONT: {0, 1, 2},
    StreamPort.DEPTH_LONGTHROW: {0, 1, 2},
    StreamPort.IMU_ACCEL: {0, 1, 2},
    StreamPort.IMU_MAG: {0, 1},
    StreamPort.PV: {0, 1, 2},
    StreamPort.MICROPHONE: {0},
    StreamPort.SPATIAL_INPUT: {0},
}


def test_ports():
    assert len(streams.ALL_PORTS) == 13
    assert len(streams.DATA_PORTS) == 11
    assert int(StreamPort.CONTROL) == 3809
    assert int(StreamPort.UNITY_IPC) == 3816


def test_supported_modes():
    for port, expected in modes.items():
        assert {int(m) for m in streams.supported_modes(port)} == expected


def test_check_mode():
    assert streams.check_mode(StreamPort.PV, 2) == StreamMode.MODE_2
    with pytest.raises(UnsupportedModeError):
        streams.check_mode(StreamPort.IMU_MAG, 2)
    with pytest.raises(UnsupportedModeError):
        streams.check_mode(StreamPort.MICROPHONE, 1)
    with pytest.raises(ValidationError):
        streams.supported_modes(StreamPort.CONTROL)
    with pytest.raises(ValidationError):
        streams.as_port(1234)


def test_video_config_bytes():
    blob = streams.encode_config(StreamPort.VLC_LEFTFRONT, streams.VideoConfig())
    assert len(blob) == 11
    assert blob == bytes([0, 0x80, 0x02, 0xE0, 0x01, 30, 3]) + (1 << 20).to_bytes(4, "little")


def test_config_sizes():
    assert streams.config_size(StreamPort.PV) == 11
    assert streams.config_size(StreamPort.DEPTH_LONGTHROW) == 1
    assert streams.config_size(StreamPort.MICROPHONE) == 1
    assert streams.config_size(StreamPort.SPATIAL_INPUT) == 0


def test_config_roundtrip():
    for port in streams.DATA_PORTS:
        for mode in streams.supported_modes(port):
            if port in (StreamPort.MICROPHONE, StreamPort.SPATIAL_INPUT):
                cfg = streams.default_config(port)
            else:
                cfg = streams.default_config(port, mode)
            blob = streams.encode_config(port, cfg)
            assert len(blob) == streams.config_size(port)
            assert streams.decode_config(port, blob) == cfg


def test_vlc_resolution_fixed():
    with pytest.raises(ValidationError):
        streams.encode_config(StreamPort.VLC_LEFTLEFT, streams.VideoConfig(width=320))


def test_pv_whitelist():
    pv_modes = streams.load_pv_modes()
    assert (1920, 1080, 30) in pv_modes
    ok = streams.VideoConfig(width=1280, height=720, framerate=30)
    streams.validate_config(StreamPort.PV, ok, pv_modes)
    with pytest.raises(ValidationError):
        streams.validate_config(
            StreamPort.PV, streams.VideoConfig(width=1000, height=700), pv_modes
        )


def test_pv_modes_file(tmp_path):
    path = os.path.join(tmp_path, "modes.txt")
    with open(path, "w") as f:
        f.write("# comment\n\n800x600@24\n")
    assert streams.load_pv_modes(path) == frozenset({(800, 600, 24)})
    with open(path, "w") as f:
        f.write("800x600\n")
    with pytest.raises(ValidationError):
        streams.load_pv_modes(path)


def test_decode_config_errors():
    with pytest.raises(ProtocolError):
        streams.decode_config(StreamPort.PV, b"\x00" * 10)
    with pytest.raises(ValidationError):
        streams.decode_config(StreamPort.IMU_MAG, b"\x02")
    with pytest.raises(ValidationError):
        streams.decode_config(StreamPort.MICROPHONE, b"\x09")


def test_imu_payload_sizes():
    assert streams.IMU_SAMPLE_DTYPE.itemsize == 28
    sizes = {StreamPort.IMU_ACCEL: 2604, StreamPort.IMU_GYRO: 8820, StreamPort.IMU_MAG: 308}
    for port, size in sizes.items():
        samples = [
            streams.ImuSample(i, 1000 + i, 0.5 * i, -1.0, 9.81)
            for i in range(streams.imu_batch_size(port))
        ]
        payload = streams.pack_imu_batch(samples, port)
        assert len(payload) == size
        assert streams.unpack_imu_batch(payload, port) == samples


def test_imu_batch_size_mismatch():
    with pytest.raises(ProtocolError):
        streams.pack_imu_batch([streams.ImuSample(0, 0, 0, 0, 0)], StreamPort.IMU_ACCEL)
    with pytest.raises(ProtocolError):
        streams.imu_batch_array(b"\x00" * 2600, StreamPort.IMU_ACCEL)


def test_spatial_input_size():
    assert streams.SPATIAL_INPUT_SIZE == 1933
    assert len(streams.pack_spatial_input(streams.SpatialInputFrame())) == 1933


hand = tuple(
    streams.HandJoint((0.0, 0.0, 0.0, 1.0), (0.01 * i, 0.5, -0.25), 0.01, 2)
    for i in range(streams.HAND_JOINT_COUNT)
)


def test_spatial_input_roundtrip():
    head = streams.HeadPose((0.0, 1.5, 0.0), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0))
    eye = streams.EyeRay((0.0, 1.5, 0.0), (0.0, 0.0, -1.0))
    frame = streams.SpatialInputFrame(
        streams.VALID_HEAD | streams.VALID_EYE | streams.VALID_LEFT, head, eye, hand
    )
    out = streams.unpack_spatial_input(streams.pack_spatial_input(frame))
    assert out.valid == frame.valid
    assert out.head_valid and out.eye_valid and out.left_valid and not out.right_valid
    assert out.head == head
    assert out.eye == eye
    assert np.allclose([j.position for j in out.left], [j.position for j in hand])
    assert out.right == streams.ZERO_HAND


def test_spatial_input_invalid_hand_zeroed():
    frame = streams.SpatialInputFrame(streams.VALID_HEAD, left=hand)
    out = streams.unpack_spatial_input(streams.pack_spatial_input(frame))
    assert out.left == streams.ZERO_HAND


def test_head_right():
    head = streams.HeadPose((0.0, 0.0, 0.0), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0))
    assert np.allclose(head.right(), (1.0, 0.0, 0.0))


def test_hand_joint_order():
    assert streams.HAND_JOINT_COUNT == 26
    assert streams.HandJointKind.WRIST == 1
    assert streams.HandJointKind.LITTLE_TIP == 25
