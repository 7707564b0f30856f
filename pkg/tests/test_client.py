import hl2ss.client as client_module
from hl2ss.client import (
    ChunkSize,
    ControlClient,
    IpcClient,
    RxSession,
    download_calibration,
)
from hl2ss.calibration import DepthCalibration, PvCalibration, VlcCalibration
from hl2ss.codecs import apply_sigma_mask
from hl2ss.control import CreatePrimitive, PrimitiveType, RemoveAll, SetColor
from hl2ss.device import depth_frame
from hl2ss.errors import (
    HandshakeError,
    TransportError,
    UnsupportedModeError,
    UsageError,
    ValidationError,
)
from hl2ss.streams import (
    DATA_PORTS,
    StreamMode,
    StreamPort,
    VideoConfig,
    default_config,
    load_pv_modes,
    pack_spatial_input,
    supported_modes,
    unpack_spatial_input,
)

import math
import numpy as np
import pytest
from fractions import Fraction

pv_config = VideoConfig(width=640, height=360, framerate=30)


def frame_index(device, port, timestamp, config):
    # inverse of epoch + floor(k * 10**7 / rate)
    rate = device.rate(port, config)
    k = math.ceil(Fraction(timestamp - device.epoch) * rate / 10**7)
    assert device.timestamp(port, k, config) == timestamp
    return k


def config_for(port, mode):
    if port == StreamPort.PV:
        return VideoConfig(mode, 640, 360, 30)
    return default_config(port, mode)


def receive(emulator, port, config, n):
    with RxSession("127.0.0.1", port, config, timeout=10) as rx:
        frames = [rx.get_next_packet() for _ in range(n)]
    assert emulator.wait_idle(port, 5)
    return frames


def test_loopback_all_ports(emulator):
    device = emulator.device
    for port in DATA_PORTS:
        for mode in sorted(supported_modes(port) - {StreamMode.MODE_2}):
            config = config_for(port, mode)
            frames = receive(emulator, port, config, 100)
            for frame in frames:
                k = frame_index(device, port, frame.timestamp, config)
                assert frame == device.frame(port, k, config)
                if mode == StreamMode.MODE_1:
                    assert frame.pose is not None
                else:
                    assert frame.pose is None
            stamps = [f.timestamp for f in frames]
            assert stamps == sorted(set(stamps))


def test_consecutive_frames(emulator):
    frames = receive(emulator, StreamPort.VLC_LEFTFRONT, None, 30)
    deltas = np.diff([f.timestamp for f in frames])
    assert set(deltas) <= {333333, 333334}
    frames = receive(emulator, StreamPort.DEPTH_LONGTHROW, None, 10)
    assert set(np.diff([f.timestamp for f in frames])) == {2000000}


def test_tracking_loss_poses(emulator):
    device = emulator.device
    config = default_config(StreamPort.DEPTH_LONGTHROW, StreamMode.MODE_1)
    frames = receive(emulator, StreamPort.DEPTH_LONGTHROW, config, 30)
    valid = [f.is_valid_pose() for f in frames]
    assert any(valid) and not all(valid)
    for frame in frames:
        lost = device.tracking_loss.lost(device.seconds(frame.timestamp))
        assert frame.is_valid_pose() != lost
        if lost:
            assert not frame.pose.any()


def test_decoded_session(emulator):
    device = emulator.device
    with RxSession("127.0.0.1", StreamPort.DEPTH_LONGTHROW, decoded=True, timeout=10) as rx:
        frame = rx.get_next_packet()
    emulator.wait_idle(StreamPort.DEPTH_LONGTHROW, 5)
    k = frame_index(device, StreamPort.DEPTH_LONGTHROW, frame.timestamp, None)
    img, mask = depth_frame(k)
    assert np.array_equal(frame.payload.depth, apply_sigma_mask(img.depth, mask.sigma))
    assert not frame.payload.depth[:, :4].any()

    with RxSession("127.0.0.1", StreamPort.IMU_ACCEL, decoded=True, timeout=10) as rx:
        frame = rx.get_next_packet()
    emulator.wait_idle(StreamPort.IMU_ACCEL, 5)
    assert len(frame.payload) == 93
    assert np.allclose(frame.payload["y"], -9.81)
    assert (frame.payload["frame_timestamp"] == frame.timestamp).all()

    with RxSession("127.0.0.1", StreamPort.MICROPHONE, decoded=True, timeout=10) as rx:
        frame = rx.get_next_packet()
    emulator.wait_idle(StreamPort.MICROPHONE, 5)
    assert frame.payload.shape == (2, 1024)
    assert np.abs(frame.payload[0]).max() <= 0.5 + 1e-6

    with RxSession("127.0.0.1", StreamPort.SPATIAL_INPUT, decoded=True, timeout=10) as rx:
        frame = rx.get_next_packet()
    emulator.wait_idle(StreamPort.SPATIAL_INPUT, 5)
    expected = pack_spatial_input(device.spatial_input(frame.timestamp))
    assert frame.payload == unpack_spatial_input(expected)

    with RxSession("127.0.0.1", StreamPort.PV, pv_config, decoded=True, timeout=10) as rx:
        frame = rx.get_next_packet()
    emulator.wait_idle(StreamPort.PV, 5)
    assert frame.payload.shape == (360, 640, 3)


def test_session_state():
    rx = RxSession("127.0.0.1", StreamPort.VLC_LEFTLEFT)
    with pytest.raises(UsageError):
        rx.get_next_packet()
    with pytest.raises(UnsupportedModeError):
        RxSession("127.0.0.1", StreamPort.VLC_LEFTLEFT, VideoConfig(StreamMode.MODE_2))
    with pytest.raises(ValidationError):
        RxSession("127.0.0.1", StreamPort.CONTROL)


def test_invalid_config_before_connect():
    rx = RxSession("127.0.0.1", StreamPort.PV, VideoConfig(width=1000, height=700))
    with pytest.raises(ValidationError):
        rx.open()


def test_rejected_config(emulator):
    pv_modes = load_pv_modes() | {(1000, 700, 30)}
    config = VideoConfig(width=1000, height=700, framerate=30)
    with RxSession("127.0.0.1", StreamPort.PV, config, timeout=10, pv_modes=pv_modes) as rx:
        with pytest.raises(HandshakeError):
            rx.get_next_packet()
    emulator.wait_idle(StreamPort.PV, 5)


def test_unreachable():
    with pytest.raises(TransportError):
        ControlClient("127.0.0.1", 1, timeout=1).open()


def test_chunk_size():
    assert ChunkSize.for_port(StreamPort.PV) == 65536
    assert ChunkSize.for_port(StreamPort.IMU_GYRO) == 4096


def test_download_calibration(emulator):
    vlc = download_calibration("127.0.0.1", StreamPort.VLC_LEFTFRONT)
    emulator.wait_idle(StreamPort.VLC_LEFTFRONT, 5)
    assert isinstance(vlc, VlcCalibration)
    assert vlc == emulator.device.calibration(StreamPort.VLC_LEFTFRONT)
    depth = download_calibration("127.0.0.1", StreamPort.DEPTH_LONGTHROW)
    emulator.wait_idle(StreamPort.DEPTH_LONGTHROW, 5)
    assert isinstance(depth, DepthCalibration)
    assert depth.scale == 1000.0
    pv = download_calibration(
        "127.0.0.1", StreamPort.PV, VideoConfig(StreamMode.MODE_2, 1280, 720, 30)
    )
    emulator.wait_idle(StreamPort.PV, 5)
    assert isinstance(pv, PvCalibration)
    assert np.allclose(pv.principal, (640, 360))


def test_calibration_refused():
    with pytest.raises(UnsupportedModeError):
        download_calibration("127.0.0.1", StreamPort.IMU_MAG)
    with pytest.raises(UnsupportedModeError):
        download_calibration("127.0.0.1", StreamPort.MICROPHONE)


def test_control_client(emulator):
    with ControlClient("127.0.0.1") as client:
        assert client.get_version() == (1, 0, 0, 0)
        client.set_white_balance_value(2700)
        client.set_exposure(1, 1000)
        # replies are ordered, so the settings above have been applied
        client.get_version()
    emulator.wait_idle(StreamPort.CONTROL, 5)
    settings = emulator.device.settings()
    assert settings["white_balance_value"] == 2700
    assert settings["exposure"] == (1, 1000)


def test_ipc_client(emulator):
    with IpcClient("127.0.0.1") as client:
        key = client.send_scene(CreatePrimitive(PrimitiveType.SPHERE))
        assert key >= 1
        assert client.send_scene(SetColor(key, (0.0, 1.0, 0.0, 1.0))) == 1
        assert client.push([SetColor(key, (1.0, 0.0, 0.0, 1.0)), RemoveAll()]) == [1, 1]
    emulator.wait_idle(StreamPort.UNITY_IPC, 5)
    assert emulator.scene.snapshot() == {}


class ResetSocket:
    def sendall(self, data):
        pass

    def recv(self, size):
        raise ConnectionResetError(104, "Connection reset by peer")

    def shutdown(self, how):
        pass

    def close(self):
        pass


def test_calibration_reset(monkeypatch):
    monkeypatch.setattr(client_module, "connect", lambda host, port, timeout: ResetSocket())
    with pytest.raises(TransportError):
        download_calibration("127.0.0.1", StreamPort.VLC_LEFTFRONT)
