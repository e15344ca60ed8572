"""Topic-based publish/subscribe relay over TCP plus the HTTP ingest client.

The relay stands in for a managed IoT message broker at desk scale: QoS-0
(at-most-once) fan-out, no retained messages, no persistence. Reliability and
ordering come from the underlying TCP stream; the upstream audio path uses
HTTP POST with retries instead, mirroring the deployment choice of a reliable
transport for the heavy payloads.

Wire frame, all integers big-endian:

    u32 length | u8 opcode | u16 topic_len | topic (UTF-8) | body

where length counts everything after itself.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from queue import Empty, Queue
from typing import Callable, Optional

from .codec import MAX_PAYLOAD_BYTES
from .errors import TransportError

OP_SUBSCRIBE = 0x01
OP_PUBLISH = 0x02
OP_MESSAGE = 0x03
OP_PING = 0x04
OP_PONG = 0x05

_VALID_OPCODES = frozenset((OP_SUBSCRIBE, OP_PUBLISH, OP_MESSAGE, OP_PING, OP_PONG))

# Payload limit plus header slack.
MAX_FRAME_BYTES = MAX_PAYLOAD_BYTES + 4096
MAX_TOPIC_BYTES = 256

_LEN = struct.Struct(">I")
_HEAD = struct.Struct(">BH")

Address = tuple[str, int]


def validate_topic(topic: str) -> bytes:
    """Check topic constraints and return its UTF-8 bytes."""
    if not topic or any(c.isspace() for c in topic):
        raise ValueError(f"topic must be nonempty without whitespace: {topic!r}")
    raw = topic.encode("utf-8")
    if len(raw) > MAX_TOPIC_BYTES:
        raise ValueError(f"topic exceeds {MAX_TOPIC_BYTES} bytes: {topic!r}")
    return raw


def encode_frame(opcode: int, topic: str = "", body: bytes = b"") -> bytes:
    topic_raw = validate_topic(topic) if topic else b""
    length = _HEAD.size + len(topic_raw) + len(body)
    if _LEN.size + length > MAX_FRAME_BYTES:
        raise TransportError(f"frame of {_LEN.size + length} bytes exceeds {MAX_FRAME_BYTES}")
    return _LEN.pack(length) + _HEAD.pack(opcode, len(topic_raw)) + topic_raw + body


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket, max_frame: int = MAX_FRAME_BYTES) -> tuple[int, str, bytes]:
    """Read one frame; raises TransportError on EOF or protocol violation."""
    (length,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if length < _HEAD.size or _LEN.size + length > max_frame:
        raise TransportError(f"declared frame length {length} outside protocol bounds")
    payload = _recv_exact(sock, length)
    opcode, topic_len = _HEAD.unpack_from(payload)
    if opcode not in _VALID_OPCODES:
        raise TransportError(f"unknown opcode 0x{opcode:02x}")
    if _HEAD.size + topic_len > length:
        raise TransportError("topic length exceeds frame")
    topic = payload[_HEAD.size : _HEAD.size + topic_len].decode("utf-8")
    body = payload[_HEAD.size + topic_len :]
    return opcode, topic, body


# A stalled subscriber must not wedge fan-out for everyone else: writes that
# cannot drain within this window drop the connection (QoS-0).
DEFAULT_SEND_TIMEOUT_S = 10.0


class _Conn:
    """Relay-side connection bookkeeping."""

    def __init__(self, sock: socket.socket, peer: Address, send_timeout_s: float = DEFAULT_SEND_TIMEOUT_S):
        self.sock = sock
        self.peer = peer
        seconds = int(send_timeout_s)
        micros = int((send_timeout_s - seconds) * 1e6)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDTIMEO, struct.pack("ll", seconds, micros))
        self.topics: set[str] = set()
        self.last_seen = time.monotonic()
        self.write_lock = threading.Lock()
        self.alive = True

    def send(self, frame: bytes) -> bool:
        try:
            with self.write_lock:
                self.sock.sendall(frame)
            return True
        except OSError:
            return False

    def close(self):
        self.alive = False
        # shutdown first: close() alone would leave the reader thread blocked
        # in recv() holding the fd open, and no FIN would reach the peer
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class Relay:
    """Desk-scale pub/sub relay: routes each PUBLISH body to every live
    subscriber of its topic, at most once, bytes untouched."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        max_frame: int = MAX_FRAME_BYTES,
        keepalive_s: float = 30.0,
        send_timeout_s: float = DEFAULT_SEND_TIMEOUT_S,
    ):
        self.max_frame = max_frame
        self.keepalive_s = keepalive_s
        self.send_timeout_s = send_timeout_s
        self._listener = socket.create_server((host, port))
        self._lock = threading.Lock()
        self._conns: set[_Conn] = set()
        self._subs: dict[str, set[_Conn]] = {}
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> Address:
        host, port = self._listener.getsockname()[:2]
        return host, port

    def start(self) -> "Relay":
        for target in (self._accept_loop, self._keepalive_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            self._drop(conn)

    def __enter__(self) -> "Relay":
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, peer = self._listener.accept()
            except OSError:
                return
            sock.settimeout(None)
            conn = _Conn(sock, peer, self.send_timeout_s)
            with self._lock:
                self._conns.add(conn)
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: _Conn):
        try:
            while not self._stop.is_set():
                opcode, topic, body = read_frame(conn.sock, self.max_frame)
                conn.last_seen = time.monotonic()
                if opcode == OP_SUBSCRIBE:
                    validate_topic(topic)
                    with self._lock:
                        conn.topics.add(topic)
                        self._subs.setdefault(topic, set()).add(conn)
                elif opcode == OP_PUBLISH:
                    self._fan_out(topic, body)
                elif opcode == OP_PING:
                    conn.send(encode_frame(OP_PONG))
                # OP_PONG just refreshes last_seen; OP_MESSAGE from a client is ignored.
        except (TransportError, ValueError, OSError):
            pass
        finally:
            self._drop(conn)

    def _fan_out(self, topic: str, body: bytes):
        frame = encode_frame(OP_MESSAGE, topic, body)
        with self._lock:
            targets = list(self._subs.get(topic, ()))
        for conn in targets:
            if not conn.send(frame):
                self._drop(conn)

    def _keepalive_loop(self):
        ping = encode_frame(OP_PING)
        while not self._stop.wait(self.keepalive_s):
            now = time.monotonic()
            with self._lock:
                conns = list(self._conns)
            for conn in conns:
                if now - conn.last_seen > 2.0 * self.keepalive_s:
                    self._drop(conn)
                else:
                    conn.send(ping)

    def _drop(self, conn: _Conn):
        with self._lock:
            self._conns.discard(conn)
            for topic in conn.topics:
                subs = self._subs.get(topic)
                if subs:
                    subs.discard(conn)
                    if not subs:
                        self._subs.pop(topic, None)
        conn.close()


class RelayClient:
    """Single-connection pub/sub client.

    A background reader answers relay pings and queues MESSAGE bodies, so a
    consumer that is busy between polls never gets reaped. Safe to hand
    between threads, but only one thread may publish at a time.
    """

    def __init__(self, address: Address, timeout: float = 10.0):
        try:
            self._sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to relay at {address}: {exc}") from exc
        self._sock.settimeout(None)
        self._write_lock = threading.Lock()
        self._queue: Queue[tuple[str, bytes]] = Queue()
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while not self._closed.is_set():
                opcode, topic, body = read_frame(self._sock)
                if opcode == OP_MESSAGE:
                    self._queue.put((topic, body))
                elif opcode == OP_PING:
                    self._send(encode_frame(OP_PONG))
        except (TransportError, OSError):
            self._closed.set()

    def _send(self, frame: bytes):
        try:
            with self._write_lock:
                self._sock.sendall(frame)
        except OSError as exc:
            self._closed.set()
            raise TransportError(f"relay connection lost: {exc}") from exc

    def publish(self, topic: str, body: bytes):
        """Fire-and-forget publish; returns once the frame is flushed."""
        if self._closed.is_set():
            raise TransportError("client is closed")
        self._send(encode_frame(OP_PUBLISH, topic, body))

    def subscribe(self, topic: str):
        if self._closed.is_set():
            raise TransportError("client is closed")
        self._send(encode_frame(OP_SUBSCRIBE, topic))

    def recv(self, timeout: Optional[float] = None) -> Optional[tuple[str, bytes]]:
        """Next (topic, body), or None on timeout. Raises once the connection
        is gone and the queue is drained."""
        try:
            return self._queue.get(timeout=timeout)
        except Empty:
            if self._closed.is_set():
                raise TransportError("relay connection closed")
            return None

    @property
    def connected(self) -> bool:
        return not self._closed.is_set()

    def close(self):
        self._closed.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


def connect_with_backoff(
    address: Address,
    attempts: int = 5,
    base_delay_s: float = 0.5,
    on_status: Optional[Callable[[str], None]] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> RelayClient:
    """Dial the relay, retrying with exponential backoff."""
    delay = base_delay_s
    for attempt in range(1, attempts + 1):
        try:
            return RelayClient(address)
        except TransportError as exc:
            if attempt == attempts:
                raise
            if on_status:
                on_status(f"relay unreachable ({exc}); retry {attempt}/{attempts - 1} in {delay:.1f}s")
            sleep(delay)
            delay *= 2
    raise TransportError("unreachable")  # pragma: no cover


@dataclass(frozen=True)
class IngestResult:
    """Outcome of one upstream POST, after retries."""

    status: Optional[int]  # HTTP status, or None if the network never answered
    attempts: int
    error: Optional[str] = None

    @property
    def accepted(self) -> bool:
        return self.status == 202


def http_ingest_client(
    endpoint_url: str,
    payload: bytes,
    attempts: int = 3,
    base_delay_s: float = 0.5,
    timeout_s: float = 10.0,
    sleep: Callable[[float], None] = time.sleep,
) -> IngestResult:
    """POST a latin-1 payload to the ingest endpoint.

    Network failures retry with exponential backoff (attempts total, delays
    base, 2*base, ...). Any HTTP status is a definitive verdict and is
    returned without retrying; the caller decides what to log or drop.
    """
    request = urllib.request.Request(
        endpoint_url,
        data=payload,
        headers={"Content-Type": "application/octet-stream"},
        method="POST",
    )
    delay = base_delay_s
    last_error = None
    for attempt in range(1, attempts + 1):
        try:
            with urllib.request.urlopen(request, timeout=timeout_s) as response:
                return IngestResult(status=response.status, attempts=attempt)
        except urllib.error.HTTPError as exc:
            return IngestResult(status=exc.code, attempts=attempt)
        except (urllib.error.URLError, OSError) as exc:
            last_error = str(exc)
            if attempt < attempts:
                sleep(delay)
                delay *= 2
    return IngestResult(status=None, attempts=attempts, error=last_error)
