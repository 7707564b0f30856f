#! /usr/bin/env python

from hl2ss import __version__
from hl2ss.calibration import describe_calibration, encode_calibration
from hl2ss.client import ControlClient, IpcClient, RxSession, download_calibration
from hl2ss.control import (
    CREATOR_IDS,
    IPC_RESERVED,
    BeginDisplayList,
    CreatePrimitive,
    CreateText,
    EndDisplayList,
    IpcMessage,
    PrimitiveType,
    Remove,
    RemoveAll,
    SceneId,
    SetActive,
    SetColor,
    SetTargetMode,
    SetText,
    SetTexture,
    SetWorldTransform,
    TargetMode,
    encode_scene,
)
from hl2ss.emulator import EmulatorConfig, serve
from hl2ss.errors import (
    Hl2ssError,
    ProtocolError,
    StartupError,
    TransportError,
    ValidationError,
)
from hl2ss.recording import RecordingWriter, read_recording
from hl2ss.streams import StreamPort, default_config, encode_config
from hl2ss.wire import TICKS_PER_SECOND

import argparse
import dataclasses
import logging
import os
import sys
import time
import numpy as np
import pandas as pd
import matplotlib.pyplot as plt

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TRANSPORT = 2
EXIT_PROTOCOL = 3
EXIT_USAGE = 4


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the usage code instead of argparse's 2,
    which is taken by transport failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def port_arg(text: str) -> StreamPort:
    r"""Port by number (``3800``) or name (``vlc_leftfront``)."""
    try:
        return StreamPort(int(text))
    except ValueError:
        pass
    try:
        return StreamPort[text.upper()]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown port {text!r}; use a number or one of "
            + ", ".join(p.name.lower() for p in StreamPort)
        ) from None


def probe(args):
    """Print the server version."""
    with ControlClient(args.host, args.port, timeout=args.timeout) as client:
        version = client.get_version()
    print("v" + ".".join(str(v) for v in version))


def record(args):
    """Record a stream session to a container file."""
    rx = RxSession(args.host, args.port, default_config(args.port, args.mode),
                   timeout=args.timeout)
    blob = encode_config(rx.port, rx.config)
    out = args.out or f"{rx.port.name.lower()}.hl2r"
    with rx, RecordingWriter(out, rx.port, rx.mode, blob) as writer:
        deadline = time.monotonic() + args.duration
        while time.monotonic() < deadline:
            frame = rx.get_next_packet()
            if time.monotonic() > deadline:
                break
            writer.write(frame)
            if args.verbose:
                print(f"frame {writer.count - 1}: {frame.timestamp}", file=sys.stderr)
    print(f"{writer.count} frames -> {out}")


def frame_table(recording) -> pd.DataFrame:
    r"""One row per frame of a recording: stamp, timestamp, delta ticks,
    payload bytes and pose validity."""
    timestamps = np.array([f.timestamp for f in recording.frames], dtype=np.uint64)
    delta = np.diff(timestamps.astype(np.int64), prepend=timestamps[:1].astype(np.int64))
    return pd.DataFrame(
        {
            "stamp": np.arange(len(recording.frames)),
            "timestamp": timestamps,
            "delta": delta,
            "payload_bytes": [len(f.payload) for f in recording.frames],
            "pose_valid": [f.is_valid_pose() for f in recording.frames],
        }
    )


def inspect(args):
    """Summarize a recording as a frame table and an interval plot."""
    recording = read_recording(args.recording)
    df = frame_table(recording)
    df.to_csv(args.outbase + ".frames.tsv", sep="\t", index=False)

    plt.figure(figsize=(6, 3))
    plt.plot(df.stamp[1:], df.delta[1:] / (TICKS_PER_SECOND / 1000), ".", ms=3)
    plt.xlabel("frame")
    plt.ylabel("interval (ms)")
    plt.title(recording.header.port.name)
    plt.tight_layout()
    plt.savefig(args.outbase + ".intervals." + args.img_type)
    plt.close()

    n = len(df)
    seconds = 0.0
    if n:
        seconds = (int(df.timestamp.iloc[-1]) - int(df.timestamp.iloc[0])) / TICKS_PER_SECOND
    fps = (n - 1) / seconds if seconds > 0 else 0.0
    print(
        f"{recording.header.port.name} mode {int(recording.header.mode)}: "
        f"{n} frames, {seconds:.3f} s, {fps:.2f} fps"
    )


def calib(args):
    """Download a calibration blob and write it with a text sidecar."""
    calibration = download_calibration(args.host, args.port, timeout=args.timeout)
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, f"calibration_{args.port.name.lower()}")
    with open(base + ".bin", "wb") as f:
        f.write(encode_calibration(calibration))
    with open(base + ".txt", "w") as f:
        f.write(describe_calibration(calibration))
    print(base + ".bin")


# --------------------------------------------------------------- scene scripts

LAST_KEY = "$"

_ALIASES = {
    "create": "create_primitive",
}

# property commands: (class, number of arguments after the key)
_KEYED = {
    "set_active": (SetActive, 1),
    "set_world_transform": (SetWorldTransform, 10),
    "set_color": (SetColor, 4),
    "set_texture": (SetTexture, 1),
    "remove": (Remove, 0),
}


def _float(token: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ValidationError(f"expected a number, got {token!r}") from None


def _int(token: str) -> int:
    try:
        return int(token, 0)
    except ValueError:
        raise ValidationError(f"expected an integer, got {token!r}") from None


def parse_scene_line(line: str, last_key: int):
    r"""Turn one script line into a scene command or a raw
    :class:`~hl2ss.control.IpcMessage`; ``None`` for blank lines.

    ``$`` stands for the key of the most recent creator; property commands
    given without a key use it too.

    Raises:
        ValidationError: unknown verb, wrong arguments or a forbidden
            command id
    """
    tokens = line.split("#", 1)[0].split()
    if not tokens:
        return None
    if tokens[0] == "set" and len(tokens) > 1:
        tokens = ["set_" + tokens[1]] + tokens[2:]
    verb, args = _ALIASES.get(tokens[0], tokens[0]), tokens[1:]
    if verb == "create_primitive":
        if len(args) != 1:
            raise ValidationError("create_primitive takes one primitive type")
        if args[0].upper() in PrimitiveType.__members__:
            return CreatePrimitive(PrimitiveType[args[0].upper()])
        return CreatePrimitive(_int(args[0]))
    if verb == "create_text":
        return CreateText()
    if verb in ("remove_all", "begin_display_list", "end_display_list"):
        if args:
            raise ValidationError(f"{verb} takes no arguments")
        return {"remove_all": RemoveAll, "begin_display_list": BeginDisplayList,
                "end_display_list": EndDisplayList}[verb]()
    if verb == "set_target_mode":
        if len(args) != 1:
            raise ValidationError("set_target_mode takes one mode")
        if args[0].upper() in TargetMode.__members__:
            return SetTargetMode(TargetMode[args[0].upper()])
        return SetTargetMode(_int(args[0]))
    if verb == "command":
        if not 1 <= len(args) <= 2:
            raise ValidationError("command takes an id and optional hex parameters")
        command_id = _int(args[0])
        if command_id == IPC_RESERVED or command_id not in SceneId._value2member_map_:
            raise ValidationError(f"command id {command_id} is not a remote scene command")
        try:
            params = bytes.fromhex(args[1]) if len(args) == 2 else b""
        except ValueError:
            raise ValidationError(f"bad hex parameters {args[1]!r}") from None
        return IpcMessage(command_id, params)

    def key(token):
        return last_key if token == LAST_KEY else _int(token)

    if verb == "set_text":
        if len(args) < 6:
            raise ValidationError("set_text takes key size r g b a text")
        k, args = key(args[0]), args[1:]
        return SetText(k, _float(args[0]), tuple(_float(a) for a in args[1:5]),
                       " ".join(args[5:]))
    if verb not in _KEYED:
        raise ValidationError(f"unknown scene command {tokens[0]!r}")
    cls, arity = _KEYED[verb]
    if len(args) == arity + 1:
        k, args = key(args[0]), args[1:]
    elif len(args) == arity:
        k = last_key
    else:
        raise ValidationError(f"{verb} takes [key] and {arity} arguments, got {len(args)}")
    if cls is SetActive:
        return SetActive(k, _int(args[0]))
    if cls is SetTexture:
        with open(args[0], "rb") as f:
            return SetTexture(k, f.read())
    if cls is Remove:
        return Remove(k)
    values = [_float(a) for a in args]
    if cls is SetColor:
        return SetColor(k, tuple(values))
    return SetWorldTransform(k, tuple(values[0:3]), tuple(values[3:7]), tuple(values[7:10]))


def read_scene_script(path: str):
    r"""Split a script into its non-empty statements, with their line
    numbers. ``;`` separates statements on one line."""
    with open(path, "r") as f:
        for number, line in enumerate(f, 1):
            for statement in line.split("#", 1)[0].split(";"):
                if statement.strip():
                    yield number, statement.strip()


def scene(args):
    """Run a remote scene script, printing one reply per command."""
    statements = list(read_scene_script(args.script))
    # reject bad commands before anything is sent; $ resolves to 0 here
    for number, statement in statements:
        try:
            cmd = parse_scene_line(statement, 0)
            if not isinstance(cmd, IpcMessage):
                encode_scene(cmd)
        except ValidationError as e:
            raise ValidationError(f"{args.script}:{number}: {e}") from None
    last_key = 0
    with IpcClient(args.host, args.port, timeout=args.timeout) as client:
        for number, statement in statements:
            cmd = parse_scene_line(statement, last_key)
            if isinstance(cmd, IpcMessage):
                reply = client.send_message(cmd)
            else:
                reply = client.send_scene(cmd)
            if cmd.command_id in CREATOR_IDS:
                last_key = reply
                print(reply)
            else:
                print("ok" if reply == 1 else f"failed ({reply})")
            logger.debug("%s:%d: %s -> %s", args.script, number, statement, reply)


def emulate(args):
    """Run the device emulator until interrupted."""
    config = EmulatorConfig.from_file(args.config)
    overrides = {"clock_multiplier": args.clock_mult, "host": args.host}
    config = dataclasses.replace(
        config, **{k: v for k, v in overrides.items() if v is not None}
    )
    handle = serve(config)
    print(f"emulator listening on {config.host}, ports "
          + " ".join(str(int(p)) for p in handle.ports), flush=True)
    try:
        if args.duration is None:
            handle.serve_forever()
        else:
            time.sleep(args.duration)
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()


def get_parser():
    parser = _Parser(description="HoloLens 2 sensor streaming client, recorder and emulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(
        title="subcommands",
        description="specify one of these",
        required=True,
        help="additional help available for each subcommand",
    )

    # parser for probe subprogram
    parser_probe = subparsers.add_parser(
        "probe",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="print the server version",
    )
    parser_probe.add_argument(
        "--port", type=int, default=int(StreamPort.CONTROL), help="control port"
    )
    parser_probe.set_defaults(func=probe)

    # parser for record subprogram
    parser_record = subparsers.add_parser(
        "record",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="record a stream to a container file",
    )
    parser_record.add_argument(
        "--port", type=port_arg, required=True, help="stream port, number or name"
    )
    parser_record.add_argument(
        "--mode",
        type=int,
        default=0,
        choices=(0, 1),
        help="0: data only, 1: data and pose",
    )
    parser_record.add_argument(
        "--duration", type=float, default=2.0, help="seconds to record"
    )
    parser_record.add_argument(
        "--out", type=str, default=None, help="container path, default <port>.hl2r"
    )
    parser_record.set_defaults(func=record)

    # parser for inspect subprogram
    parser_inspect = subparsers.add_parser(
        "inspect",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="summarize a recording",
    )
    parser_inspect.add_argument("recording", type=str, help="container file")
    parser_inspect.add_argument(
        "--outbase", type=str, default="hl2ss.out", help="output file base name"
    )
    parser_inspect.add_argument(
        "--img_type", type=str, default="svg", help="output image file type"
    )
    parser_inspect.set_defaults(func=inspect)

    # parser for calib subprogram
    parser_calib = subparsers.add_parser(
        "calib",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="download a sensor calibration",
    )
    parser_calib.add_argument(
        "--port", type=port_arg, required=True, help="stream port, number or name"
    )
    parser_calib.add_argument("--out", type=str, default=".", help="output directory")
    parser_calib.set_defaults(func=calib)

    # parser for scene subprogram
    parser_scene = subparsers.add_parser(
        "scene",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="run a remote scene script",
    )
    parser_scene.add_argument("script", type=str, help="scene script, one command per line")
    parser_scene.add_argument(
        "--port", type=int, default=int(StreamPort.UNITY_IPC), help="IPC port"
    )
    parser_scene.set_defaults(func=scene)

    # parser for emulate subprogram
    parser_emulate = subparsers.add_parser(
        "emulate",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help="serve all ports with synthetic data",
    )
    parser_emulate.add_argument(
        "--config", type=str, default=None, help="emulator JSON config, default built in"
    )
    parser_emulate.add_argument(
        "--clock-mult",
        type=float,
        default=None,
        help="simulated seconds per wall-clock second, overrides the config",
    )
    parser_emulate.add_argument(
        "--host", type=str, default=None, help="address to bind, overrides the config"
    )
    parser_emulate.add_argument(
        "--duration", type=float, default=None, help="stop after this many seconds"
    )
    parser_emulate.set_defaults(func=emulate)

    # client parameters
    for subparser in [parser_probe, parser_record, parser_calib, parser_scene]:
        subparser.add_argument("--host", type=str, default="127.0.0.1", help="server address")
        subparser.add_argument(
            "--timeout", type=float, default=10.0, help="connect and receive timeout, seconds"
        )

    # shared parameters
    for subparser in [parser_probe, parser_record, parser_inspect, parser_calib,
                      parser_scene, parser_emulate]:
        subparser.add_argument(
            "--verbose", action="store_true", help="flag for verbose messaging"
        )

    return parser


def main(arg_list=None):
    args = get_parser().parse_args(arg_list)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        args.func(args)
    except (TransportError, StartupError) as e:
        print(f"hl2ss: {e}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ProtocolError as e:
        print(f"hl2ss: protocol error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValidationError, OSError) as e:
        print(f"hl2ss: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Hl2ssError as e:
        print(f"hl2ss: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
