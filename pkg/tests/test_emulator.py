import hl2ss.emulator as emulator_module
from hl2ss.client import ControlClient, IpcClient, RxSession
from hl2ss.control import (
    IPC_HEADER,
    CreatePrimitive,
    CreateText,
    Exposure,
    IpcMessage,
    PrimitiveType,
    Remove,
    RemoveAll,
    SetColor,
    SetTargetMode,
    SetText,
    TargetMode,
    WhiteBalanceValue,
    encode_control,
    encode_scene,
    encode_version,
)
from hl2ss.device import DEFAULT_EPOCH, DeviceModel, TrackingLossSchedule, frame_timestamp
from hl2ss.emulator import EmulatorConfig, SceneState, SessionAction, handle_handshake
from hl2ss.errors import ProtocolError, StartupError, ValidationError
from hl2ss.streams import (
    ModeConfig,
    StreamMode,
    StreamPort,
    VideoConfig,
    default_config,
    encode_config,
    load_pv_modes,
)
from hl2ss.wire import FrameUnpacker

import os
import socket
import struct
import time
import numpy as np
import pytest
from fractions import Fraction

pv_modes = load_pv_modes()


def test_handshake_decisions():
    blob = encode_config(StreamPort.DEPTH_LONGTHROW, ModeConfig(StreamMode.MODE_1))
    decision = handle_handshake(StreamPort.DEPTH_LONGTHROW, blob, pv_modes)
    assert decision.action is SessionAction.STREAM
    assert decision.include_pose

    blob = encode_config(StreamPort.VLC_RIGHTFRONT, VideoConfig(StreamMode.MODE_2))
    decision = handle_handshake(StreamPort.VLC_RIGHTFRONT, blob, pv_modes)
    assert decision.action is SessionAction.CALIBRATION
    assert not decision.include_pose

    decision = handle_handshake(StreamPort.IMU_MAG, b"\x02", pv_modes)
    assert decision.action is SessionAction.REJECT
    decision = handle_handshake(StreamPort.DEPTH_LONGTHROW, b"\x07", pv_modes)
    assert decision.action is SessionAction.REJECT

    bad_pv = struct.pack("<BHHBBI", 0, 1000, 700, 30, 0, 1 << 20)
    assert handle_handshake(StreamPort.PV, bad_pv, pv_modes).action is SessionAction.REJECT
    good_pv = struct.pack("<BHHBBI", 0, 1280, 720, 30, 0, 1 << 20)
    decision = handle_handshake(StreamPort.PV, good_pv, pv_modes)
    assert decision.action is SessionAction.STREAM
    assert (decision.config.width, decision.config.height) == (1280, 720)


def test_handle_control():
    device = DeviceModel(version=(2, 1, 0, 7))
    assert emulator_module.handle_control(device, b"\x06") == encode_version((2, 1, 0, 7))
    assert emulator_module.handle_control(device, encode_control(WhiteBalanceValue(2700))) is None
    assert device.settings()["white_balance_value"] == 2700
    with pytest.raises(ProtocolError):
        emulator_module.handle_control(device, b"\x09")


def test_settings_snapshot_immutable():
    device = DeviceModel()
    before = device.settings()
    emulator_module.handle_control(device, encode_control(WhiteBalanceValue(4000)))
    assert before["white_balance_value"] is None
    with pytest.raises(TypeError):
        before["marker"] = True


def test_scene_keys():
    scene = SceneState()
    assert scene.apply(CreatePrimitive(PrimitiveType.CUBE)) == 1
    assert scene.apply(CreateText()) == 2
    assert scene.apply(Remove(1)) == 1
    assert scene.apply(Remove(1)) == 0
    assert scene.apply(CreatePrimitive(PrimitiveType.PLANE)) == 3
    assert sorted(scene.snapshot()) == [2, 3]
    assert scene.snapshot()[3].kind == "plane"


def test_scene_properties():
    scene = SceneState()
    cube = scene.apply(CreatePrimitive(PrimitiveType.CUBE))
    text = scene.apply(CreateText())
    assert scene.apply(SetColor(cube, (1.0, 0.0, 0.0, 1.0))) == 1
    assert scene.apply(SetColor(cube, (1.5, 0.0, 0.0, 1.0))) == 0
    assert scene.apply(SetColor(99, (0.0, 0.0, 0.0, 1.0))) == 0
    assert scene.apply(SetText(cube, 0.1, (1.0, 1.0, 1.0, 1.0), "no")) == 0
    assert scene.apply(SetText(text, 0.1, (1.0, 1.0, 1.0, 1.0), "hello")) == 1
    objects = scene.snapshot()
    assert objects[cube].color == (1.0, 0.0, 0.0, 1.0)
    assert objects[text].text == "hello"


def test_scene_target_last():
    scene = SceneState()
    first = scene.apply(CreatePrimitive(PrimitiveType.CUBE))
    last = scene.apply(CreatePrimitive(PrimitiveType.SPHERE))
    assert scene.apply(SetTargetMode(TargetMode.USE_LAST)) == 1
    assert scene.apply(SetColor(first, (0.0, 1.0, 0.0, 1.0))) == 1
    objects = scene.snapshot()
    assert objects[last].color == (0.0, 1.0, 0.0, 1.0)
    assert objects[first].color == (1.0, 1.0, 1.0, 1.0)
    assert scene.apply(SetTargetMode(9)) == 0


def test_scene_snapshot_is_copy():
    scene = SceneState()
    key = scene.apply(CreatePrimitive(PrimitiveType.CUBE))
    scene.snapshot()[key].active = False
    assert scene.snapshot()[key].active


def test_remove_all_keeps_counting():
    scene = SceneState()
    scene.apply(CreatePrimitive(PrimitiveType.CUBE))
    scene.apply(CreatePrimitive(PrimitiveType.CUBE))
    assert scene.apply(RemoveAll()) == 1
    assert scene.snapshot() == {}
    assert scene.apply(CreateText()) == 3


def test_handle_ipc():
    scene = SceneState()
    assert emulator_module.handle_ipc(scene, IpcMessage(3, b"")) == 0
    assert emulator_module.handle_ipc(scene, IpcMessage(12, b"")) == 0
    assert emulator_module.handle_ipc(scene, encode_scene(CreatePrimitive(PrimitiveType.QUAD))) == 1
    with pytest.raises(ProtocolError):
        emulator_module.handle_ipc(scene, IpcMessage(0xFFFFFFFF, b""))


def test_config_validation():
    with pytest.raises(ValidationError):
        EmulatorConfig.from_dict({"bogus": 1})
    with pytest.raises(ValidationError):
        EmulatorConfig(rates={"depth": 6})
    with pytest.raises(ValidationError):
        EmulatorConfig(rates={"thermal": 5})
    with pytest.raises(ValidationError):
        EmulatorConfig(clock_multiplier=0)
    with pytest.raises(ValidationError):
        EmulatorConfig(version=(1, 0, 0))
    with pytest.raises(ValidationError):
        EmulatorConfig(codec="hevc")


def test_config_file(tmp_path):
    config = EmulatorConfig.from_file()
    device = config.device()
    assert device.rates[StreamPort.IMU_ACCEL] == 12
    assert device.rates[StreamPort.IMU_GYRO] == 21
    assert device.rates[StreamPort.DEPTH_LONGTHROW] == 5
    assert device.rates[StreamPort.VLC_LEFTLEFT] == 30
    path = os.path.join(tmp_path, "bad.json")
    with open(path, "w") as f:
        f.write("{not json")
    with pytest.raises(ValidationError):
        EmulatorConfig.from_file(path)


def test_frame_timestamps():
    assert frame_timestamp(0, Fraction(30)) == DEFAULT_EPOCH
    assert frame_timestamp(3, Fraction(30)) == DEFAULT_EPOCH + 1000000
    device = DeviceModel()
    vlc = [device.timestamp(StreamPort.VLC_LEFTFRONT, k) for k in range(1000)]
    assert set(np.diff(vlc)) == {333333, 333334}
    depth = [device.timestamp(StreamPort.DEPTH_LONGTHROW, k) for k in range(100)]
    assert set(np.diff(depth)) == {2000000}
    mic = [device.timestamp(StreamPort.MICROPHONE, k) for k in range(100)]
    assert set(np.diff(mic)) <= {213333, 213334}
    pv = VideoConfig(width=1280, height=720, framerate=15)
    assert device.timestamp(StreamPort.PV, 15, pv) == DEFAULT_EPOCH + 10**7


def test_tracking_loss():
    schedule = TrackingLossSchedule([(1.0, 2.0)])
    assert not schedule.lost(0.999)
    assert schedule.lost(1.0)
    assert not schedule.lost(2.0)
    with pytest.raises(ValidationError):
        TrackingLossSchedule([(3.0, 3.0)])
    device = DeviceModel(tracking_loss=schedule)
    lost = device.pose(DEFAULT_EPOCH + 15 * 10**6)
    assert lost.dtype == np.float32 and not lost.any()
    valid = device.pose(DEFAULT_EPOCH + 5 * 10**6)
    assert valid[3, 3] == 1.0
    assert np.isclose(np.linalg.det(valid[:3, :3]), 1.0, atol=1e-5)
    assert device.spatial_input(DEFAULT_EPOCH + 15 * 10**6).valid == 0


def test_pv_exposure_visible():
    device = DeviceModel()
    config = VideoConfig(width=640, height=360, framerate=30)
    assert not device.pv_image(0, config)[..., 2].any()
    emulator_module.handle_control(device, encode_control(Exposure(1, 10000)))
    assert (device.pv_image(0, config)[..., 2] == 100).all()


def test_second_serve_fails(emulator):
    with pytest.raises(StartupError):
        emulator_module.serve(EmulatorConfig())


def raw_exchange(port, data, size=1, timeout=5):
    with socket.create_connection(("127.0.0.1", int(port)), timeout=timeout) as sock:
        try:
            if data:
                sock.sendall(data)
            return sock.recv(size)
        except ConnectionError:
            # closed with our bytes unread: the peer resets instead
            return b""


def test_rejected_handshake_closes(emulator):
    assert raw_exchange(StreamPort.DEPTH_LONGTHROW, b"\x07") == b""
    assert emulator.wait_idle(StreamPort.DEPTH_LONGTHROW, 5)
    assert raw_exchange(StreamPort.IMU_MAG, b"\x02") == b""
    assert emulator.wait_idle(StreamPort.IMU_MAG, 5)


def test_incomplete_handshake_times_out(emulator):
    start = time.monotonic()
    assert raw_exchange(StreamPort.PV, b"\x00\x80\x07", timeout=10) == b""
    assert time.monotonic() - start >= emulator.config.handshake_timeout * 0.9
    assert emulator.wait_idle(StreamPort.PV, 5)


def test_control_unknown_tag_closes(emulator):
    assert raw_exchange(StreamPort.CONTROL, b"\x09") == b""
    assert emulator.wait_idle(StreamPort.CONTROL, 5)


def test_ipc_unassigned_and_reserved(emulator):
    reply = raw_exchange(StreamPort.UNITY_IPC, IPC_HEADER.pack(3, 0), 4)
    assert struct.unpack("<I", reply)[0] == 0
    assert emulator.wait_idle(StreamPort.UNITY_IPC, 5)
    assert raw_exchange(StreamPort.UNITY_IPC, IPC_HEADER.pack(0xFFFFFFFF, 0)) == b""
    assert emulator.wait_idle(StreamPort.UNITY_IPC, 5)


def live_session(port):
    r"""A client for ``port`` and a call that needs a live session."""
    if port == StreamPort.CONTROL:
        client = ControlClient("127.0.0.1", port, timeout=10)
        return client, client.get_version
    if port == StreamPort.UNITY_IPC:
        client = IpcClient("127.0.0.1", port, timeout=10)
        return client, lambda: client.send_message(IpcMessage(12, b""))
    client = RxSession("127.0.0.1", port, timeout=10)
    return client, client.get_next_packet


@pytest.mark.parametrize(
    "port, message",
    [
        (StreamPort.SPATIAL_INPUT, b""),
        (StreamPort.CONTROL, b"\x06"),
        (StreamPort.UNITY_IPC, IPC_HEADER.pack(12, 0)),
    ],
)
def test_one_client_per_port(emulator, port, message):
    served = emulator.servers[port].sessions_served
    client, exchange = live_session(port)
    with client:
        exchange()
        # the second client is closed without a reply
        assert raw_exchange(port, message) == b""
        exchange()
    assert emulator.wait_idle(port, 5)
    assert emulator.servers[port].sessions_served == served + 1


def test_delivery_rate(emulator):
    # 12 fps at the fixture's clock multiplier
    expected = 12 * emulator.config.clock_multiplier
    with RxSession("127.0.0.1", StreamPort.IMU_ACCEL, timeout=10) as rx:
        first = rx.get_next_packet()
        start = time.monotonic()
        for _ in range(int(expected)):
            last = rx.get_next_packet()
        elapsed = time.monotonic() - start
    assert emulator.wait_idle(StreamPort.IMU_ACCEL, 5)
    assert 0.9 <= elapsed <= 1.1
    assert last.timestamp - first.timestamp == 10**7 * int(expected) // 12


def delivered_at_real_time(port, duration):
    r"""Frames a real-time (clock multiplier 1) device delivers on ``port``
    within ``duration`` seconds of the first frame's arrival."""
    device = DeviceModel()
    listener = emulator_module._bind("127.0.0.1", 0)
    server = emulator_module.PortServer(
        listener.getsockname()[1],
        listener,
        emulator_module.stream_session(device, port, pv_modes, 5.0),
    )
    server.start()
    frames = []
    try:
        with socket.create_connection(("127.0.0.1", server.port), timeout=5) as sock:
            sock.sendall(encode_config(port, default_config(port, StreamMode.MODE_0)))
            unpacker = FrameUnpacker(expect_pose=False)
            start = None
            while True:
                chunk = sock.recv(1 << 16)
                assert chunk
                now = time.monotonic()
                if start is not None and now >= start + duration:
                    break
                new = unpacker.feed(chunk)
                if new and start is None:
                    start = now
                frames.extend(new)
    finally:
        server.stop()
    return frames


@pytest.mark.parametrize(
    "port, duration, deltas",
    [
        (StreamPort.VLC_LEFTFRONT, 2.0, {333333, 333334}),
        (StreamPort.DEPTH_LONGTHROW, 5.0, {2000000}),
    ],
)
def test_real_time_frame_count(port, duration, deltas):
    frames = delivered_at_real_time(port, duration)
    expected = float(DeviceModel().rate(port)) * duration
    assert 0.95 * expected <= len(frames) <= 1.05 * expected
    assert set(np.diff([f.timestamp for f in frames])) <= deltas
