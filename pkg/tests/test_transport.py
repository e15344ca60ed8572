import hashlib
import http.server
import socket
import threading
import time

import pytest

from melcast.errors import TransportError
from melcast.transport import (
    MAX_FRAME_BYTES,
    OP_PUBLISH,
    OP_SUBSCRIBE,
    Relay,
    RelayClient,
    connect_with_backoff,
    encode_frame,
    http_ingest_client,
    read_frame,
    validate_topic,
)


@pytest.fixture
def relay():
    r = Relay(keepalive_s=1.0)
    r.start()
    yield r
    r.stop()


def collect(client, n, timeout=5.0):
    got = []
    deadline = time.monotonic() + timeout
    while len(got) < n and time.monotonic() < deadline:
        msg = client.recv(timeout=0.2)
        if msg is not None:
            got.append(msg)
    return got


# --- frame protocol -------------------------------------------------------------


def test_frame_round_trip_via_socket_pair():
    a, b = socket.socketpair()
    try:
        a.sendall(encode_frame(OP_PUBLISH, "site0/edge/spectra", b"\x00\xffbody"))
        opcode, topic, body = read_frame(b)
        assert (opcode, topic, body) == (OP_PUBLISH, "site0/edge/spectra", b"\x00\xffbody")
    finally:
        a.close()
        b.close()


def test_frame_oversize_encode_rejected():
    with pytest.raises(TransportError):
        encode_frame(OP_PUBLISH, "t", b"x" * MAX_FRAME_BYTES)


def test_frame_oversize_declared_length_rejected():
    a, b = socket.socketpair()
    try:
        a.sendall((MAX_FRAME_BYTES + 100).to_bytes(4, "big") + b"\x02")
        with pytest.raises(TransportError):
            read_frame(b)
    finally:
        a.close()
        b.close()


def test_topic_validation():
    assert validate_topic("site0/edge/spectra") == b"site0/edge/spectra"
    for bad in ("", "has space", "tab\there", "x" * 300):
        with pytest.raises(ValueError):
            validate_topic(bad)


# --- relay semantics -------------------------------------------------------------


def test_fan_out_three_subscribers(relay):
    subs = [RelayClient(relay.address) for _ in range(3)]
    for sub in subs:
        sub.subscribe("site0/playback/predictions")
    time.sleep(0.1)  # let SUBSCRIBE frames land before publishing
    pub = RelayClient(relay.address)
    pub.publish("site0/playback/predictions", b"payload-bytes\x00\x01")
    for sub in subs:
        got = collect(sub, 1)
        assert got == [("site0/playback/predictions", b"payload-bytes\x00\x01")]
    for c in subs + [pub]:
        c.close()


def test_per_publisher_fifo(relay):
    sub = RelayClient(relay.address)
    sub.subscribe("t/fifo/x")
    time.sleep(0.1)
    pub = RelayClient(relay.address)
    bodies = [f"msg-{i}".encode() for i in range(50)]
    for body in bodies:
        pub.publish("t/fifo/x", body)
    got = [body for _, body in collect(sub, len(bodies))]
    assert got == bodies
    sub.close()
    pub.close()


def test_publish_without_subscribers_is_dropped(relay):
    pub = RelayClient(relay.address)
    pub.publish("t/nobody/here", b"lost")  # QoS-0: accepted, silently dropped
    late = RelayClient(relay.address)
    late.subscribe("t/nobody/here")
    assert late.recv(timeout=0.3) is None  # no retained messages
    pub.close()
    late.close()


def test_resubscribe_after_reconnect_sees_only_new(relay):
    sub = RelayClient(relay.address)
    sub.subscribe("t/a/b")
    time.sleep(0.1)
    pub = RelayClient(relay.address)
    pub.publish("t/a/b", b"one")
    assert collect(sub, 1)[0][1] == b"one"
    sub.close()

    pub.publish("t/a/b", b"while-away")
    sub2 = RelayClient(relay.address)
    sub2.subscribe("t/a/b")
    time.sleep(0.1)
    pub.publish("t/a/b", b"two")
    got = collect(sub2, 1)
    assert [body for _, body in got] == [b"two"]
    sub2.close()
    pub.close()


def test_oversize_frame_kills_only_offender(relay):
    sub = RelayClient(relay.address)
    sub.subscribe("t/iso/x")
    time.sleep(0.1)

    rogue = socket.create_connection(relay.address)
    rogue.sendall((MAX_FRAME_BYTES * 2).to_bytes(4, "big"))
    # relay must close the offender...
    rogue.settimeout(2.0)
    assert rogue.recv(1024) == b""
    rogue.close()

    # ...while other clients stay unaffected
    pub = RelayClient(relay.address)
    pub.publish("t/iso/x", b"still alive")
    assert collect(sub, 1)[0][1] == b"still alive"
    sub.close()
    pub.close()


def test_relay_never_mutates_bodies(relay):
    sub = RelayClient(relay.address)
    sub.subscribe("t/hash/x")
    time.sleep(0.1)
    pub = RelayClient(relay.address)
    body = bytes(range(256)) * 64
    pub.publish("t/hash/x", body)
    (_, received), = collect(sub, 1)
    assert hashlib.sha256(received).hexdigest() == hashlib.sha256(body).hexdigest()
    sub.close()
    pub.close()


def test_keepalive_reaps_silent_connection():
    relay = Relay(keepalive_s=0.1)
    relay.start()
    try:
        # a raw socket that subscribes but never answers pings
        silent = socket.create_connection(relay.address)
        silent.sendall(encode_frame(OP_SUBSCRIBE, "t/reap/x"))
        silent.settimeout(3.0)
        # the relay keeps pinging, then reaps after two missed keepalives
        deadline = time.monotonic() + 3.0
        closed = False
        while time.monotonic() < deadline:
            data = silent.recv(1024)
            if data == b"":
                closed = True
                break
        assert closed
        silent.close()

        # a real client answers pings and survives well past 2 keepalives
        alive = RelayClient(relay.address)
        alive.subscribe("t/reap/y")
        time.sleep(0.5)
        pub = RelayClient(relay.address)
        pub.publish("t/reap/y", b"ping-pong kept me alive")
        assert collect(alive, 1)[0][1] == b"ping-pong kept me alive"
        alive.close()
        pub.close()
    finally:
        relay.stop()


def test_slow_subscriber_cannot_wedge_fanout():
    relay = Relay(keepalive_s=5.0, send_timeout_s=0.3)
    relay.start()
    try:
        # a subscriber that never reads: its TCP buffers eventually fill
        stalled = socket.create_connection(relay.address)
        stalled.sendall(encode_frame(OP_SUBSCRIBE, "t/slow/x"))
        healthy = RelayClient(relay.address)
        healthy.subscribe("t/slow/x")
        time.sleep(0.1)

        pub = RelayClient(relay.address)
        chunk = bytes(64 * 1024)
        for i in range(64):  # ~4 MB, far past any default socket buffering
            pub.publish("t/slow/x", chunk)
        pub.publish("t/slow/x", b"the end")

        # the healthy subscriber still receives everything, in order
        got = collect(healthy, 65, timeout=20.0)
        assert len(got) == 65
        assert got[-1][1] == b"the end"
        healthy.close()
        pub.close()
        stalled.close()
    finally:
        relay.stop()


def test_client_connect_refused():
    with pytest.raises(TransportError):
        RelayClient(("127.0.0.1", 1))  # nothing listens there


def test_connect_with_backoff_eventually_raises():
    sleeps = []
    with pytest.raises(TransportError):
        connect_with_backoff(("127.0.0.1", 1), attempts=3, base_delay_s=0.01, sleep=sleeps.append)
    assert sleeps == [0.01, 0.02]


# --- HTTP ingest ------------------------------------------------------------------


class _StubHandler(http.server.BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        status = 413 if length > 131072 else 202
        self.send_response(status)
        self.send_header("Content-Length", "0")
        self.end_headers()


@pytest.fixture
def stub_server():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/ingest"
    server.shutdown()
    server.server_close()


def test_ingest_accepted(stub_server):
    result = http_ingest_client(stub_server, b"x" * 1000)
    assert result.accepted and result.status == 202 and result.attempts == 1


def test_ingest_oversize_gets_413(stub_server):
    result = http_ingest_client(stub_server, b"x" * 131073)
    assert result.status == 413 and not result.accepted and result.attempts == 1


def test_ingest_unreachable_retries_then_drops():
    # grab a port with no listener
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    sleeps = []
    result = http_ingest_client(
        f"http://127.0.0.1:{port}/v1/ingest", b"x", attempts=3, sleep=sleeps.append
    )
    assert result.status is None
    assert result.attempts == 3
    assert sleeps == [0.5, 1.0]  # exponential backoff from the 500 ms base
    assert result.error
