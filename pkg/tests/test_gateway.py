"""Gateway protocol: framing, sessions, and live reconnecting links."""

import contextlib
import socket
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labloop.canonical import canonicalize
from labloop.gateway import (
    MAX_BODY_BYTES,
    REPLAY_CACHE_SIZE,
    AdapterClient,
    AdapterSession,
    FrameTooLarge,
    GatewayError,
    GatewayServer,
    GatewayTimeout,
    MalformedBody,
    Message,
    MessageType,
    ReplayCache,
    decode_frames,
    dispatch_request,
    encode_frame,
    handshake,
    reconnect_delay,
)
from labloop.gateway.client import KILL_MID_FRAME, SEND

PING = Message(type=MessageType.PING, id="p1", ts=7)
REQ = Message(type=MessageType.REQ, id="r1", ts=9, payload={"op": "noop"}, corr_id="c1")


# -- framing -----------------------------------------------------------------

def test_prefix_is_big_endian_body_length():
    raw = encode_frame(PING)
    body = raw[4:]
    assert raw[:4] == len(body).to_bytes(4, "big")
    assert body == canonicalize(PING.body())


def test_roundtrip_single_frame():
    assert decode_frames(encode_frame(REQ)) == ([REQ], b"")


def test_partial_frame_stays_in_tail():
    raw = encode_frame(PING) + encode_frame(REQ)[:3]
    messages, tail = decode_frames(raw)
    assert messages == [PING]
    assert tail == encode_frame(REQ)[:3]


def test_dribble_fed_stream_decodes_everything():
    stream = encode_frame(PING) + encode_frame(REQ)
    buffer = b""
    seen = []
    for i in range(len(stream)):
        buffer += stream[i:i + 1]
        decoded, buffer = decode_frames(buffer)
        seen.extend(decoded)
    assert seen == [PING, REQ]
    assert buffer == b""


def test_oversized_body_rejected_on_encode():
    big = Message(type=MessageType.EVT, id="e1", ts=0,
                  payload={"blob": "x" * (MAX_BODY_BYTES + 1)})
    with pytest.raises(FrameTooLarge):
        encode_frame(big)


def test_oversized_prefix_rejected_before_body_arrives():
    prefix = (MAX_BODY_BYTES + 1).to_bytes(4, "big")
    with pytest.raises(FrameTooLarge):
        decode_frames(prefix)


@pytest.mark.parametrize(
    "body",
    [
        b"\xff\xfe not text",
        b"not json",
        b"[1,2]",
        b'{"type":"PING","id":"x","ts":0,"payload":{},"extra":1}',
        b'{"id":"x","ts":0,"payload":{}}',
        b'{"type":"NOPE","id":"x","ts":0,"payload":{}}',
        b'{"type":"PING","id":"","ts":0,"payload":{}}',
        b'{"type":"PING","id":"x","ts":true,"payload":{}}',
        b'{"type":"PING","id":"x","ts":0,"payload":[]}',
        b'{"type":"PING","id":"x","ts":0,"payload":{},"corr_id":5}',
    ],
)
def test_malformed_bodies_rejected(body):
    framed = len(body).to_bytes(4, "big") + body
    with pytest.raises(MalformedBody):
        decode_frames(framed)


scalar = st.one_of(st.text(max_size=8), st.integers(-(2**31), 2**31), st.booleans())
payloads = st.dictionaries(
    st.text(max_size=8), st.one_of(scalar, st.lists(scalar, max_size=3)), max_size=4
)
messages = st.builds(
    Message,
    type=st.sampled_from(list(MessageType)),
    id=st.text(min_size=1, max_size=12),
    ts=st.integers(0, 2**40),
    payload=payloads,
    corr_id=st.none() | st.text(min_size=1, max_size=12),
)


@settings(max_examples=200, deadline=None)
@given(messages)
def test_roundtrip_property(msg):
    assert decode_frames(encode_frame(msg)) == ([msg], b"")


# -- handshake and dispatch --------------------------------------------------

def hello(token="tok", **overrides):
    payload = {"adapter_id": "sim", "token": token, "capabilities": ["dock"]}
    payload.update(overrides)
    return Message(type=MessageType.HELLO, id="h1", ts=0, payload=payload)


def test_handshake_welcomes_valid_token():
    reply = handshake(hello(), "tok", session_id="s-1", ts=3)
    assert reply.type == MessageType.WELCOME
    assert reply.payload == {"session_id": "s-1", "adapter_id": "sim"}


def test_handshake_rejects_bad_token():
    reply = handshake(hello(token="wrong"), "tok")
    assert reply.type == MessageType.ERR
    assert reply.payload["code"] == "auth_failed"


def test_handshake_rejects_second_hello():
    reply = handshake(hello(), "tok", live=True)
    assert reply.type == MessageType.ERR
    assert reply.payload["code"] == "protocol_violation"


def test_handshake_rejects_non_hello_and_bad_shape():
    assert handshake(PING, "tok").payload["code"] == "protocol_violation"
    shapeless = Message(type=MessageType.HELLO, id="h1", ts=0,
                        payload={"adapter_id": "sim"})
    assert handshake(shapeless, "tok").payload["code"] == "protocol_violation"


def test_dispatch_runs_handler_once_and_replays():
    session = AdapterSession(adapter_id="sim", token="tok")
    calls = []

    def handler(req):
        calls.append(req.corr_id)
        return {"n": len(calls)}

    first = dispatch_request(session, REQ, handler)
    again = dispatch_request(session, REQ, handler)
    assert first.type == MessageType.RSP and first.payload == {"n": 1}
    assert again == first
    assert calls == ["c1"]
    assert session.executions == {"c1": 1}


def test_dispatch_in_flight_duplicate_returns_none():
    session = AdapterSession(adapter_id="sim", token="tok")
    started, release = threading.Event(), threading.Event()
    results = []

    def handler(req):
        started.set()
        assert release.wait(5)
        return {"ok": True}

    t = threading.Thread(target=lambda: results.append(
        dispatch_request(session, REQ, handler)))
    t.start()
    assert started.wait(5)
    assert dispatch_request(session, REQ, handler) is None
    release.set()
    t.join(timeout=5)
    assert results[0].payload == {"ok": True}
    assert session.executions == {"c1": 1}


def test_dispatch_caches_handler_errors():
    session = AdapterSession(adapter_id="sim", token="tok")

    def handler(req):
        raise RuntimeError("instrument on fire")

    first = dispatch_request(session, REQ, handler)
    again = dispatch_request(session, REQ, handler)
    assert first.type == MessageType.ERR
    assert first.corr_id == "c1"
    assert "instrument on fire" in first.payload["detail"]
    assert again == first
    assert session.executions == {"c1": 1}


def test_dispatch_rejects_non_req():
    session = AdapterSession(adapter_id="sim", token="tok")
    with pytest.raises(ValueError):
        dispatch_request(session, PING, lambda r: {})


def test_dispatch_falls_back_to_message_id():
    session = AdapterSession(adapter_id="sim", token="tok")
    bare = Message(type=MessageType.REQ, id="r9", ts=0, payload={})
    reply = dispatch_request(session, bare, lambda r: {"ok": True})
    assert reply.corr_id == "r9"


def test_replay_cache_evicts_oldest_first():
    cache = ReplayCache(size=3)
    for i in range(4):
        cache.put(f"c{i}", Message(type=MessageType.RSP, id="", ts=i))
    assert len(cache) == 3
    assert cache.get("c0") is None
    assert cache.get("c3") is not None
    assert REPLAY_CACHE_SIZE == 256


def test_reconnect_delay_schedule():
    assert [reconnect_delay(a) for a in range(6)] == [500, 1000, 2000, 4000, 8000, 8000]
    assert reconnect_delay(40) == 8000
    with pytest.raises(ValueError):
        reconnect_delay(-1)


# -- live links ----------------------------------------------------------------

TOKEN = "tok"
FAST = dict(ping_interval_s=0.2, dead_after_s=1.0)


@contextlib.contextmanager
def gateway(handler=None, on_event=None):
    server = GatewayServer(TOKEN, "127.0.0.1", 0, handler=handler,
                           on_event=on_event, **FAST)
    server.start()
    try:
        yield server
    finally:
        server.stop()


@contextlib.contextmanager
def adapter(server, handler, adapter_id="sim", token=TOKEN, fault_hook=None):
    client = AdapterClient("127.0.0.1", server.port, token, adapter_id,
                           ["dock"], handler, delay_ms=lambda a: 10,
                           fault_hook=fault_hook, **FAST)
    client.start()
    try:
        yield client
    finally:
        client.stop()


def echo(req):
    return {"echo": req.payload}


def raw_connect(server):
    sock = socket.create_connection(("127.0.0.1", server.port), timeout=5)
    sock.settimeout(5)
    return sock


def read_messages(sock, count, timeout_s=5.0):
    deadline = time.monotonic() + timeout_s
    buffer, seen = b"", []
    while len(seen) < count and time.monotonic() < deadline:
        try:
            chunk = sock.recv(65536)
        except socket.timeout:
            continue
        except OSError:
            break
        if not chunk:
            break
        buffer += chunk
        decoded, buffer = decode_frames(buffer)
        seen.extend(decoded)
    return seen


def wait_eof(sock, timeout_s=5.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        try:
            chunk = sock.recv(65536)
        except socket.timeout:
            continue
        except OSError:
            return True
        if not chunk:
            return True
    return False


def test_request_reply_over_tcp():
    with gateway() as server, adapter(server, echo) as client:
        assert client.wait_connected(5)
        assert server.request("sim", {"x": 1}, timeout_s=5) == {"echo": {"x": 1}}
        assert server.connected_adapters() == ["sim"]


def test_responses_match_by_corr_id_out_of_order():
    entered_a, release_a = threading.Event(), threading.Event()

    def handler(req):
        if req.payload["which"] == "a":
            entered_a.set()
            assert release_a.wait(5)
        return {"which": req.payload["which"]}

    with gateway() as server, adapter(server, handler) as client:
        assert client.wait_connected(5)
        result_a = {}

        def ask_a():
            result_a["reply"] = server.request("sim", {"which": "a"}, timeout_s=10)

        t = threading.Thread(target=ask_a)
        t.start()
        assert entered_a.wait(5)
        # the second request completes while the first is still in flight
        assert server.request("sim", {"which": "b"}, timeout_s=5) == {"which": "b"}
        release_a.set()
        t.join(timeout=5)
        assert result_a["reply"] == {"which": "a"}


def test_killed_reply_is_replayed_without_reexecution():
    calls = []
    killed = []

    def handler(req):
        calls.append(req.corr_id)
        return {"n": len(calls)}

    def hook(msg):
        if not killed:
            killed.append(msg)
            return KILL_MID_FRAME
        return SEND

    with gateway() as server, adapter(server, handler, fault_hook=hook) as client:
        assert client.wait_connected(5)
        assert server.request("sim", {"op": "x"}, timeout_s=10) == {"n": 1}
        assert len(calls) == 1
        assert all(n == 1 for n in client.session.executions.values())
        assert killed, "fault hook never fired"


def test_bad_token_is_fatal_for_the_adapter():
    with gateway() as server:
        with adapter(server, echo, token="wrong") as client:
            deadline = time.monotonic() + 5
            while client.fatal is None and time.monotonic() < deadline:
                time.sleep(0.02)
            assert isinstance(client.fatal, GatewayError)
            assert client.fatal.code == "auth_failed"
            assert not client.connected.is_set()


def test_request_to_absent_adapter_times_out():
    with gateway() as server:
        with pytest.raises(GatewayTimeout):
            server.request("ghost", {"op": "x"}, timeout_s=0.3)


def test_handler_exception_surfaces_as_gateway_error():
    def handler(req):
        raise ValueError("no such op")

    with gateway() as server, adapter(server, handler) as client:
        assert client.wait_connected(5)
        with pytest.raises(GatewayError) as exc:
            server.request("sim", {"op": "x"}, timeout_s=5)
        assert exc.value.code == "handler_error"
        assert "no such op" in exc.value.detail


def test_adapter_can_request_the_orchestrator():
    def server_handler(adapter_id, req):
        return {"for": adapter_id, "got": req.payload["q"]}

    with gateway(handler=server_handler) as server, adapter(server, echo) as client:
        assert client.wait_connected(5)
        assert client.request({"q": 7}, timeout_s=5) == {"for": "sim", "got": 7}


def test_adapter_events_reach_the_orchestrator():
    got = []
    seen = threading.Event()

    def on_event(adapter_id, msg):
        got.append((adapter_id, msg.payload))
        seen.set()

    with gateway(on_event=on_event) as server, adapter(server, echo) as client:
        assert client.wait_connected(5)
        client.emit({"progress": 50})
        assert seen.wait(5)
        assert got[0] == ("sim", {"progress": 50})


def test_connection_survives_beyond_dead_interval_via_pings():
    with gateway() as server, adapter(server, echo) as client:
        assert client.wait_connected(5)
        time.sleep(FAST["dead_after_s"] + 0.5)
        assert client.connected.is_set()
        assert server.request("sim", {"x": 2}, timeout_s=5) == {"echo": {"x": 2}}


def test_silent_connection_without_hello_is_closed():
    with gateway() as server:
        sock = raw_connect(server)
        try:
            assert wait_eof(sock, timeout_s=5)
        finally:
            sock.close()


def test_established_but_silent_link_is_closed():
    with gateway() as server:
        sock = raw_connect(server)
        try:
            sock.sendall(encode_frame(hello()))
            (welcome,) = read_messages(sock, 1)
            assert welcome.type == MessageType.WELCOME
            # never answer the pings that follow
            assert wait_eof(sock, timeout_s=5)
        finally:
            sock.close()


def test_second_hello_on_live_session_rejected():
    with gateway() as server:
        sock = raw_connect(server)
        try:
            sock.sendall(encode_frame(hello()))
            (welcome,) = read_messages(sock, 1)
            assert welcome.type == MessageType.WELCOME
            sock.sendall(encode_frame(hello()))
            replies = read_messages(sock, 2)
            errs = [m for m in replies if m.type == MessageType.ERR]
            assert errs and errs[0].payload["code"] == "protocol_violation"
        finally:
            sock.close()


def test_reconnect_resends_pending_requests():
    block, entered = threading.Event(), threading.Event()
    calls = []

    def handler(req):
        calls.append(req.corr_id)
        entered.set()
        assert block.wait(5)
        return {"done": True}

    with gateway() as server, adapter(server, handler) as client:
        assert client.wait_connected(5)
        result = {}

        def ask():
            result["reply"] = server.request("sim", {"op": "slow"}, timeout_s=10)

        t = threading.Thread(target=ask)
        t.start()
        assert entered.wait(5)
        # sever the link while the request is in flight
        link = client._link
        assert link is not None
        link.close()
        assert client.wait_connected(5)  # redialed
        block.set()
        t.join(timeout=10)
        assert result["reply"] == {"done": True}
        # the retransmitted REQ was absorbed by the replay path
        assert all(n == 1 for n in client.session.executions.values())
