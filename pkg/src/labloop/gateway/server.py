"""Orchestrator side of the gateway: listens, authenticates adapters, and
exchanges multiplexed requests over whatever connection is currently live.

Requests survive disconnects: a pending REQ is retransmitted whenever its
adapter reconnects, and the adapter's replay cache guarantees the handler
still runs once. Responses match by corr_id only, so they may arrive out of
order or on a later connection.
"""

import socket
import threading
import time
import uuid

from ..clock import WallClock
from .frames import Message, MessageType
from .link import Link
from .session import AdapterSession, dispatch_request, handshake

DEFAULT_PORT = 7430


class GatewayError(Exception):
    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


class GatewayTimeout(GatewayError):
    def __init__(self, detail: str = ""):
        super().__init__("timeout", detail)


class _Pending:
    __slots__ = ("payload", "done", "reply")

    def __init__(self, payload: dict):
        self.payload = payload
        self.done = threading.Event()
        self.reply: Message | None = None


class _AdapterState:
    """Everything the orchestrator keeps about one adapter across
    connections: the live link (if any), unanswered REQs, and the replay
    session for requests the adapter sends us."""

    def __init__(self, adapter_id: str, token: str):
        self.adapter_id = adapter_id
        self.link: Link | None = None
        self.capabilities: list[str] = []
        self.pending: dict[str, _Pending] = {}
        self.inbound = AdapterSession(adapter_id=adapter_id, token=token)
        self.connected = threading.Event()


class GatewayServer:
    def __init__(self, token: str, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 *, handler=None, on_event=None, clock=None,
                 ping_interval_s: float = 5.0, dead_after_s: float = 15.0):
        self._token = token
        self._host = host
        self.port = port
        self._handler = handler
        self._on_event = on_event
        self._clock = clock or WallClock()
        self._ping_interval_s = ping_interval_s
        self._dead_after_s = dead_after_s
        self._adapters: dict[str, _AdapterState] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, self.port))
        listener.listen(16)
        listener.settimeout(0.2)
        self.port = listener.getsockname()[1]
        self._listener = listener
        for target in (self._accept_loop, self._liveness_loop):
            t = threading.Thread(target=target, daemon=True, name=target.__name__)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._lock:
            links = [a.link for a in self._adapters.values() if a.link is not None]
        for link in links:
            link.close()
        for t in self._threads:
            t.join(timeout=2)

    # -- public API --------------------------------------------------------

    def connected_adapters(self) -> list[str]:
        with self._lock:
            return sorted(a.adapter_id for a in self._adapters.values()
                          if a.link is not None)

    def wait_for_adapter(self, adapter_id: str, timeout_s: float = 10.0) -> bool:
        state = self._state(adapter_id)
        return state.connected.wait(timeout_s)

    def request(self, adapter_id: str, payload: dict, timeout_s: float = 30.0) -> dict:
        """Send a REQ and block for its reply. Raises GatewayError on an ERR
        reply and GatewayTimeout when nothing lands in time."""
        state = self._state(adapter_id)
        corr_id = uuid.uuid4().hex
        pending = _Pending(payload)
        with self._lock:
            state.pending[corr_id] = pending
            link = state.link
        if link is not None:
            try:
                link.send(MessageType.REQ, self._now(), payload, corr_id=corr_id)
            except OSError:
                pass  # retransmitted on reconnect
        if not pending.done.wait(timeout_s):
            with self._lock:
                state.pending.pop(corr_id, None)
            raise GatewayTimeout(f"no reply from {adapter_id!r} for {corr_id}")
        reply = pending.reply
        assert reply is not None
        if reply.type == MessageType.ERR:
            raise GatewayError(reply.payload.get("code", "error"),
                               reply.payload.get("detail", ""))
        return reply.payload

    # -- internals ---------------------------------------------------------

    def _now(self) -> int:
        return self._clock.now()

    def _state(self, adapter_id: str) -> _AdapterState:
        with self._lock:
            state = self._adapters.get(adapter_id)
            if state is None:
                state = _AdapterState(adapter_id, self._token)
                self._adapters[adapter_id] = state
            return state

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stop.is_set():
            try:
                sock, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._serve_connection, args=(sock,),
                                 daemon=True)
            t.start()

    def _serve_connection(self, sock: socket.socket) -> None:
        link = Link(sock, side="o")
        state: _AdapterState | None = None
        opened = time.monotonic()
        try:
            for msg in link.messages():
                if self._stop.is_set():
                    return
                if msg is None:
                    if state is None and time.monotonic() - opened > self._dead_after_s:
                        return  # never said HELLO
                    continue
                if state is None:
                    state = self._handshake(link, msg)
                    if state is None:
                        return
                    continue
                self._on_message(state, link, msg)
        finally:
            link.close()
            if state is not None:
                with self._lock:
                    if state.link is link:
                        state.link = None
                        state.connected.clear()

    def _handshake(self, link: Link, hello: Message) -> _AdapterState | None:
        reply = handshake(hello, self._token, ts=self._now())
        if reply.type == MessageType.ERR:
            try:
                link.send(MessageType.ERR, self._now(), reply.payload)
            except OSError:
                pass
            return None
        adapter_id = hello.payload["adapter_id"]
        state = self._state(adapter_id)
        with self._lock:
            old = state.link
            state.link = link
            state.capabilities = list(hello.payload.get("capabilities", []))
            state.inbound.last_seen = self._now()
            resend = list(state.pending.items())
        if old is not None:
            old.close()  # adapter dialed anew; the previous link is stale
        link.send(MessageType.WELCOME, self._now(),
                  {"session_id": state.inbound.session_id, "adapter_id": adapter_id})
        for corr_id, pending in resend:
            try:
                link.send(MessageType.REQ, self._now(), pending.payload,
                          corr_id=corr_id)
            except OSError:
                break
        state.connected.set()
        return state

    def _on_message(self, state: _AdapterState, link: Link, msg: Message) -> None:
        state.inbound.last_seen = self._now()
        if msg.type == MessageType.HELLO:
            try:
                link.send(MessageType.ERR, self._now(),
                          {"code": "protocol_violation",
                           "detail": "session already established"})
            except OSError:
                pass
            link.close()
        elif msg.type == MessageType.PING:
            try:
                link.send(MessageType.PONG, self._now(), corr_id=msg.id)
            except OSError:
                pass
        elif msg.type == MessageType.PONG:
            pass
        elif msg.type in (MessageType.RSP, MessageType.ERR):
            if msg.corr_id is None:
                return
            with self._lock:
                pending = state.pending.pop(msg.corr_id, None)
            if pending is not None:
                pending.reply = msg
                pending.done.set()
        elif msg.type == MessageType.REQ:
            threading.Thread(target=self._serve_request,
                             args=(state, link, msg), daemon=True).start()
        elif msg.type == MessageType.EVT:
            if self._on_event is not None:
                self._on_event(state.adapter_id, msg)

    def _serve_request(self, state: _AdapterState, link: Link, req: Message) -> None:
        if self._handler is None:
            reply = Message(type=MessageType.ERR, id="", ts=req.ts,
                            payload={"code": "unsupported", "detail": "no handler"},
                            corr_id=req.corr_id or req.id)
        else:
            reply = dispatch_request(state.inbound, req,
                                     lambda r: self._handler(state.adapter_id, r))
            if reply is None:
                return
        target = state.link or link
        try:
            target.send(reply.type, self._now(), reply.payload, corr_id=reply.corr_id)
        except OSError:
            pass

    def _liveness_loop(self) -> None:
        while not self._stop.wait(self._ping_interval_s):
            now = time.monotonic()
            with self._lock:
                links = [(a, a.link) for a in self._adapters.values()
                         if a.link is not None]
            for state, link in links:
                if now - link.last_rx > self._dead_after_s:
                    link.close()
                    continue
                try:
                    link.send(MessageType.PING, self._now())
                except OSError:
                    link.close()
