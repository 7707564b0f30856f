from ._version import __version__  # noqa
from .wire import DataFrame, FrameUnpacker, encode_frame, parse_frames  # noqa
from .streams import StreamPort, StreamMode  # noqa
from .client import RxSession, ControlClient, IpcClient, download_calibration  # noqa
from .emulator import EmulatorConfig, serve  # noqa
