r"""Multi-consumer stream buffering.

One *source* per stream receives frames and forwards them to an
*interconnect*, which stores them in a bounded ring buffer and answers
queries from any number of *sinks*. Every frame gets a frame stamp, its
zero-based position in the stream; stamps keep counting after old frames
are evicted.

Roles run in threads and talk only through queues; a sink created with
notification releases a counting semaphore once per buffered frame, so a
consumer can block on :meth:`Sink.acquire` instead of polling. Sinks of
one consumer may share a semaphore to wait on several streams at once.

::

    producer = Producer()
    producer.configure(StreamPort.VLC_LEFTFRONT, host="127.0.0.1")
    producer.initialize(StreamPort.VLC_LEFTFRONT, 30 * 5)
    producer.start(StreamPort.VLC_LEFTFRONT)
    sink = Consumer().create_sink(producer, StreamPort.VLC_LEFTFRONT, notify=True)
    sink.acquire()
    stamp, frame = sink.get_most_recent_frame()
"""

from __future__ import annotations

import enum
import itertools
import logging
import queue
import threading
from collections import deque
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

from hl2ss.client import RxSession
from hl2ss.errors import Hl2ssError, UsageError, ValidationError
from hl2ss.streams import StreamConfig, StreamPort, as_port
from hl2ss.wire import DataFrame

logger = logging.getLogger(__name__)

NO_FRAME = -1
r"""Frame stamp reported before the first frame arrives."""

StampedFrame = Tuple[int, DataFrame]


class BufferStatus(enum.Enum):
    OK = 0
    EVICTED = 1
    NOT_YET = 2


class BufferedFrame(NamedTuple):
    status: BufferStatus
    stamp: int
    frame: Optional[DataFrame] = None


class RingBuffer:
    r"""The most recent ``capacity`` frames of one stream, oldest evicted
    first.

    Args:
        capacity: number of frames kept
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValidationError(f"capacity must be at least 1, got {capacity}")
        self.capacity = capacity
        self._frames = deque(maxlen=capacity)
        self.next_stamp = 0

    def __len__(self) -> int:
        return len(self._frames)

    def append(self, frame: DataFrame) -> int:
        stamp = self.next_stamp
        self._frames.append(frame)
        self.next_stamp += 1
        return stamp

    @property
    def newest_stamp(self) -> int:
        return self.next_stamp - 1 if self._frames else NO_FRAME

    @property
    def oldest_stamp(self) -> int:
        return self.next_stamp - len(self._frames) if self._frames else NO_FRAME

    def items(self) -> Iterable[StampedFrame]:
        return zip(itertools.count(self.oldest_stamp), self._frames)

    def most_recent(self) -> Optional[StampedFrame]:
        if not self._frames:
            return None
        return self.newest_stamp, self._frames[-1]

    def get(self, stamp: int) -> BufferedFrame:
        if stamp >= self.next_stamp:
            return BufferedFrame(BufferStatus.NOT_YET, stamp)
        if not self._frames or stamp < self.oldest_stamp:
            return BufferedFrame(BufferStatus.EVICTED, stamp)
        return BufferedFrame(BufferStatus.OK, stamp, self._frames[stamp - self.oldest_stamp])

    def nearest(self, timestamp: int) -> Optional[StampedFrame]:
        r"""Buffered frame closest in time to ``timestamp``; ties go to the
        earlier frame."""
        if not self._frames:
            return None
        return min(self.items(), key=lambda sf: (abs(sf[1].timestamp - timestamp), sf[1].timestamp))


class QueryKind(enum.Enum):
    FRAME_STAMP = 0
    MOST_RECENT = 1
    NEAREST = 2
    BUFFERED = 3


class Query(NamedTuple):
    kind: QueryKind
    argument: int = 0


class InterconnectCore:
    r"""Single-threaded state of an interconnect: the ring buffer plus the
    set of attached sinks.

    The threaded :class:`Interconnect` drives one of these from its
    message loop; tests drive it directly to replay a fixed interleaving.
    """

    def __init__(self, capacity: int):
        self.buffer = RingBuffer(capacity)
        self.sinks: Dict[int, bool] = {}
        self._ids = itertools.count()

    def push(self, frame: DataFrame) -> List[int]:
        r"""Buffer ``frame``; returns the ids of sinks to notify."""
        self.buffer.append(frame)
        return [sink_id for sink_id, notify in self.sinks.items() if notify]

    def attach(self, notify: bool) -> Tuple[int, int]:
        r"""Register a sink; returns its id and the attach-time frame
        stamp."""
        sink_id = next(self._ids)
        self.sinks[sink_id] = notify
        return sink_id, self.buffer.newest_stamp

    def detach(self, sink_id: int) -> None:
        self.sinks.pop(sink_id, None)

    def query(self, sink_id: int, q: Query):
        if sink_id not in self.sinks:
            raise UsageError(f"sink {sink_id} is not attached")
        if q.kind is QueryKind.FRAME_STAMP:
            return self.buffer.newest_stamp
        if q.kind is QueryKind.MOST_RECENT:
            return self.buffer.most_recent()
        if q.kind is QueryKind.NEAREST:
            return self.buffer.nearest(q.argument)
        return self.buffer.get(q.argument)


_STOP = object()


class Interconnect:
    r"""Owner of one stream's ring buffer, serving sinks from a single
    message loop thread. Frames and requests are handled strictly in
    arrival order.

    Args:
        capacity: ring buffer size in frames
        name: thread name suffix
    """

    def __init__(self, capacity: int, name: str = "interconnect"):
        self.core = InterconnectCore(capacity)
        self.name = name
        self._inbox: queue.Queue = queue.Queue()
        self._replies: Dict[int, queue.Queue] = {}
        self._semaphores: Dict[int, threading.Semaphore] = {}
        self._running = threading.Event()
        # requests are enqueued under this lock, so none can land after _STOP
        self._gate = threading.Lock()
        self._thread = threading.Thread(target=self._loop, name=f"hl2ss-{name}", daemon=True)

    @property
    def running(self) -> bool:
        return self._running.is_set()

    def start(self) -> None:
        self._running.set()
        self._thread.start()

    def stop(self) -> None:
        with self._gate:
            if not self.running:
                return
            self._running.clear()
            self._inbox.put(_STOP)
        self._thread.join(timeout=5)

    def push(self, frame: DataFrame) -> None:
        self._inbox.put(("frame", frame))

    def request(self, message: tuple, reply: queue.Queue):
        with self._gate:
            if not self.running:
                raise UsageError(f"{self.name} is not running")
            self._inbox.put(message + (reply,))
        result = reply.get()
        if result is _STOP:
            raise UsageError(f"{self.name} stopped")
        if isinstance(result, Hl2ssError):
            raise result
        return result

    def _loop(self) -> None:
        while True:
            message = self._inbox.get()
            if message is _STOP:
                break
            kind = message[0]
            if kind == "frame":
                for sink_id in self.core.push(message[1]):
                    self._semaphores[sink_id].release()
                continue
            reply = message[-1]
            try:
                if kind == "attach":
                    sink_id, stamp = self.core.attach(message[1])
                    self._replies[sink_id] = reply
                    if message[1]:
                        self._semaphores[sink_id] = message[2]
                    result = (sink_id, stamp)
                elif kind == "detach":
                    self.core.detach(message[1])
                    self._replies.pop(message[1], None)
                    self._semaphores.pop(message[1], None)
                    result = None
                else:
                    result = self.core.query(message[1], message[2])
            except Hl2ssError as e:
                result = e
            reply.put(result)
        pending = set(self._replies.values())
        while True:
            try:
                message = self._inbox.get_nowait()
            except queue.Empty:
                break
            if isinstance(message, tuple) and message[0] != "frame":
                pending.add(message[-1])
        for reply in pending:
            reply.put(_STOP)
        logger.debug("%s stopped after %d frames", self.name, self.core.buffer.next_stamp)


class Sink:
    r"""Query handle on an :class:`Interconnect`.

    :meth:`attach` must complete before any other method.

    Args:
        interconnect: interconnect to query
        notify: receive one wakeup per frame buffered after attaching
        semaphore: wakeup semaphore to use instead of a private one; sinks
            of one consumer may share it to wait on several streams at
            once. Implies ``notify``.
    """

    def __init__(
        self,
        interconnect: Interconnect,
        notify: bool = False,
        semaphore: Optional[threading.Semaphore] = None,
    ):
        self.interconnect = interconnect
        self.notify = notify or semaphore is not None
        if semaphore is None and self.notify:
            semaphore = threading.Semaphore(0)
        self.semaphore = semaphore
        self.sink_id: Optional[int] = None
        self.attach_stamp: Optional[int] = None
        self._reply: queue.Queue = queue.Queue()

    def attach(self) -> int:
        r"""Attach to the interconnect and return the frame stamp of the
        newest frame at that moment."""
        if self.sink_id is not None:
            raise UsageError("sink is already attached")
        self.sink_id, self.attach_stamp = self.interconnect.request(
            ("attach", self.notify, self.semaphore), self._reply
        )
        return self.attach_stamp

    def get_attach_response(self) -> int:
        self._check()
        return self.attach_stamp

    def _check(self) -> None:
        if self.sink_id is None:
            raise UsageError("sink must be attached before it is queried")

    def _query(self, kind: QueryKind, argument: int = 0):
        self._check()
        return self.interconnect.request(("query", self.sink_id, Query(kind, argument)), self._reply)

    def acquire(self, timeout: Optional[float] = None) -> bool:
        r"""Wait for one new-frame notification; returns ``False`` on
        timeout."""
        self._check()
        if self.semaphore is None:
            raise UsageError("sink was created without notification")
        return self.semaphore.acquire(timeout=timeout)

    def get_frame_stamp(self) -> int:
        r"""Frame stamp of the newest buffered frame, or :data:`NO_FRAME`."""
        return self._query(QueryKind.FRAME_STAMP)

    def get_most_recent_frame(self) -> Optional[StampedFrame]:
        return self._query(QueryKind.MOST_RECENT)

    def get_nearest(self, timestamp: int) -> Optional[StampedFrame]:
        r"""Buffered frame closest in time to ``timestamp``, ties to the
        earlier frame; ``None`` if nothing is buffered."""
        return self._query(QueryKind.NEAREST, timestamp)

    def get_buffered_frame(self, stamp: int) -> BufferedFrame:
        return self._query(QueryKind.BUFFERED, stamp)

    def detach(self) -> None:
        if self.sink_id is None:
            return
        try:
            self.interconnect.request(("detach", self.sink_id), self._reply)
        except UsageError:
            # a stopped interconnect has already dropped every sink
            pass
        self.sink_id = None


def attach(
    interconnect: Interconnect,
    with_notification: bool = False,
    semaphore: Optional[threading.Semaphore] = None,
) -> Sink:
    r"""Create a sink on ``interconnect`` and complete its attach.

    Raises:
        UsageError: the interconnect is not running
    """
    sink = Sink(interconnect, with_notification, semaphore)
    sink.attach()
    return sink


class Source:
    r"""Receives frames from one stream session and forwards each to an
    interconnect.

    Attributes:
        error: the exception that ended the session, if it failed
    """

    def __init__(self, session: RxSession, interconnect: Interconnect):
        self.session = session
        self.interconnect = interconnect
        self.error: Optional[Exception] = None
        self._stopping = threading.Event()
        self._thread = threading.Thread(
            target=self._loop, name=f"hl2ss-source-{session.port.name}", daemon=True
        )

    def start(self) -> None:
        self.session.open()
        self._thread.start()

    def _loop(self) -> None:
        try:
            while not self._stopping.is_set():
                self.interconnect.push(self.session.get_next_packet())
        except Exception as e:
            if not self._stopping.is_set():
                logger.warning("%s source failed: %s", self.session.port.name, e)
                self.error = e

    def stop(self) -> None:
        self._stopping.set()
        self.session.close()
        self._thread.join(timeout=5)


class _Stream:
    def __init__(self, session: RxSession):
        self.session = session
        self.interconnect: Optional[Interconnect] = None
        self.source: Optional[Source] = None


class Producer:
    r"""Control role: manages one source and interconnect per stream."""

    def __init__(self):
        self._streams: Dict[StreamPort, _Stream] = {}

    def configure(
        self,
        port: Union[int, StreamPort],
        config: Optional[StreamConfig] = None,
        host: str = "127.0.0.1",
        **session_args,
    ) -> None:
        port = as_port(port)
        self._streams[port] = _Stream(RxSession(host, port, config, **session_args))

    def _stream(self, port) -> _Stream:
        try:
            return self._streams[as_port(port)]
        except KeyError:
            raise UsageError(f"{as_port(port).name} is not configured") from None

    def initialize(self, port: Union[int, StreamPort], capacity: int) -> None:
        stream = self._stream(port)
        stream.interconnect = Interconnect(capacity, f"interconnect-{as_port(port).name}")
        stream.interconnect.start()

    def start(self, port: Union[int, StreamPort]) -> None:
        stream = self._stream(port)
        if stream.interconnect is None:
            raise UsageError(f"{as_port(port).name} is not initialized")
        stream.source = Source(stream.session, stream.interconnect)
        stream.source.start()

    def stop(self, port: Union[int, StreamPort]) -> None:
        stream = self._stream(port)
        if stream.source is not None:
            stream.source.stop()
            stream.source = None
        if stream.interconnect is not None:
            stream.interconnect.stop()

    def get_interconnect(self, port: Union[int, StreamPort]) -> Interconnect:
        stream = self._stream(port)
        if stream.interconnect is None:
            raise UsageError(f"{as_port(port).name} is not initialized")
        return stream.interconnect

    def get_source(self, port: Union[int, StreamPort]) -> Optional[Source]:
        return self._stream(port).source


class Consumer:
    r"""Creates sinks against a :class:`Producer`'s streams.

    Sinks created with ``shared=True`` all release :attr:`semaphore`, so
    one :meth:`acquire` wakes on a frame from any of those streams.
    """

    def __init__(self):
        self.semaphore = threading.Semaphore(0)

    def create_sink(
        self,
        producer: Producer,
        port: Union[int, StreamPort],
        notify: bool = False,
        shared: bool = False,
    ) -> Sink:
        return attach(producer.get_interconnect(port), notify, self.semaphore if shared else None)

    def acquire(self, timeout: Optional[float] = None) -> bool:
        r"""Wait for one frame on any sink created with ``shared=True``."""
        return self.semaphore.acquire(timeout=timeout)


def associate(timestamp: int, sinks: Dict[str, Sink]) -> Dict[str, Optional[StampedFrame]]:
    r"""For each named sink, the buffered frame nearest to ``timestamp``.

    This is the association step of a multi-stream loop: take a frame from
    one stream and pair it with the closest frames of the others.
    """
    return {name: sink.get_nearest(timestamp) for name, sink in sinks.items()}
