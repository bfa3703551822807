"""Adapter side of the gateway: dials the orchestrator, authenticates, and
serves requests. The adapter always initiates the connection, so it works
from behind a firewall; on any drop it redials on the backoff schedule and
the replay cache keeps retried requests idempotent.
"""

import socket
import threading
import time
import uuid

from ..clock import WallClock
from .frames import Message, MessageType, encode_frame
from .link import Link
from .server import GatewayError, GatewayTimeout, _Pending
from .session import AdapterSession, dispatch_request, reconnect_delay

# Verdicts a fault hook may return for an outgoing reply.
SEND = "send"
DROP = "drop"
KILL_MID_FRAME = "kill_mid_frame"


class AdapterClient:
    """Connects one named adapter to the orchestrator.

    handler(req: Message) -> dict runs once per correlation id; its result
    (or ERR, if it raises) is cached and replayed on retries. fault_hook is
    a drill seam: when set, it is consulted before every reply send and may
    order the reply dropped or the connection killed mid-frame.
    """

    def __init__(self, host: str, port: int, token: str, adapter_id: str,
                 capabilities: list[str], handler, *, clock=None,
                 ping_interval_s: float = 5.0, dead_after_s: float = 15.0,
                 delay_ms=reconnect_delay, fault_hook=None, on_event=None):
        self.adapter_id = adapter_id
        self._host = host
        self._port = port
        self._token = token
        self._capabilities = list(capabilities)
        self._handler = handler
        self._clock = clock or WallClock()
        self._ping_interval_s = ping_interval_s
        self._dead_after_s = dead_after_s
        self._delay_ms = delay_ms
        self.fault_hook = fault_hook
        self._on_event = on_event
        self.session = AdapterSession(adapter_id=adapter_id, token=token)
        self._pending: dict[str, _Pending] = {}
        self._link: Link | None = None
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self.connected = threading.Event()
        self.fatal: GatewayError | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"adapter-{self.adapter_id}")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        link = self._link
        if link is not None:
            link.close()
        if self._thread is not None:
            self._thread.join(timeout=2)

    def wait_connected(self, timeout_s: float = 10.0) -> bool:
        return self.connected.wait(timeout_s)

    # -- outbound traffic --------------------------------------------------

    def emit(self, payload: dict) -> None:
        """Fire-and-forget EVT on the current connection, if any."""
        link = self._link
        if link is None or not self.connected.is_set():
            return
        try:
            link.send(MessageType.EVT, self._now(), payload)
        except OSError:
            pass

    def request(self, payload: dict, timeout_s: float = 30.0) -> dict:
        """REQ to the orchestrator; blocks for the reply."""
        corr_id = uuid.uuid4().hex
        pending = _Pending(payload)
        with self._lock:
            self._pending[corr_id] = pending
            link = self._link
        if link is not None:
            try:
                link.send(MessageType.REQ, self._now(), payload, corr_id=corr_id)
            except OSError:
                pass
        if not pending.done.wait(timeout_s):
            with self._lock:
                self._pending.pop(corr_id, None)
            raise GatewayTimeout(f"no reply for {corr_id}")
        reply = pending.reply
        assert reply is not None
        if reply.type == MessageType.ERR:
            raise GatewayError(reply.payload.get("code", "error"),
                               reply.payload.get("detail", ""))
        return reply.payload

    # -- internals ---------------------------------------------------------

    def _now(self) -> int:
        return self._clock.now()

    def _run(self) -> None:
        attempt = 0
        while not self._stop.is_set():
            try:
                sock = socket.create_connection((self._host, self._port), timeout=5)
            except OSError:
                if self._stop.wait(self._delay_ms(attempt) / 1000):
                    return
                attempt += 1
                continue
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            link = Link(sock, side="a")
            self._link = link
            attempt = self._serve(link, attempt)
            self._link = None
            self.connected.clear()
            link.close()
            if self.fatal is not None:
                return
            if self._stop.wait(self._delay_ms(attempt) / 1000):
                return
            attempt += 1

    def _serve(self, link: Link, attempt: int) -> int:
        """Drive one connection until it dies; returns the next attempt
        number (reset to 0 once the session was established)."""
        try:
            link.send(MessageType.HELLO, self._now(), {
                "adapter_id": self.adapter_id,
                "token": self._token,
                "capabilities": self._capabilities,
            })
        except OSError:
            return attempt
        welcomed = False
        last_ping = time.monotonic()
        for msg in link.messages():
            if self._stop.is_set():
                return attempt
            if msg is None:
                now = time.monotonic()
                if now - link.last_rx > self._dead_after_s:
                    return 0 if welcomed else attempt
                if welcomed and now - last_ping > self._ping_interval_s:
                    last_ping = now
                    try:
                        link.send(MessageType.PING, self._now())
                    except OSError:
                        return 0
                continue
            if not welcomed:
                if msg.type == MessageType.WELCOME:
                    welcomed = True
                    self.session.session_id = msg.payload.get(
                        "session_id", self.session.session_id)
                    self.connected.set()
                    with self._lock:
                        resend = list(self._pending.items())
                    for corr_id, pending in resend:
                        try:
                            link.send(MessageType.REQ, self._now(),
                                      pending.payload, corr_id=corr_id)
                        except OSError:
                            break
                    continue
                if msg.type == MessageType.ERR:
                    if msg.payload.get("code") == "auth_failed":
                        self.fatal = GatewayError("auth_failed",
                                                  msg.payload.get("detail", ""))
                    return attempt
                return attempt  # anything else before WELCOME is a violation
            self._on_message(link, msg)
        return 0 if welcomed else attempt

    def _on_message(self, link: Link, msg: Message) -> None:
        if msg.type == MessageType.PING:
            try:
                link.send(MessageType.PONG, self._now(), corr_id=msg.id)
            except OSError:
                pass
        elif msg.type == MessageType.PONG:
            pass
        elif msg.type == MessageType.REQ:
            threading.Thread(target=self._serve_request, args=(msg,),
                             daemon=True).start()
        elif msg.type in (MessageType.RSP, MessageType.ERR):
            if msg.corr_id is None:
                return
            with self._lock:
                pending = self._pending.pop(msg.corr_id, None)
            if pending is not None:
                pending.reply = msg
                pending.done.set()
        elif msg.type == MessageType.EVT:
            if self._on_event is not None:
                self._on_event(msg)

    def _serve_request(self, req: Message) -> None:
        reply = dispatch_request(self.session, req, self._handler)
        if reply is None:
            return  # first delivery still executing; it will answer
        # Reply on whatever connection is live NOW: the receiving one may
        # have died while the handler ran.
        link = self._link
        if link is None:
            return  # orchestrator will retransmit; the cache answers then
        out = Message(type=reply.type, id=link.next_id(), ts=self._now(),
                      payload=reply.payload, corr_id=reply.corr_id)
        raw = encode_frame(out)
        verdict = SEND
        if self.fault_hook is not None:
            verdict = self.fault_hook(out) or SEND
        try:
            if verdict == SEND:
                link.send_raw(raw)
            elif verdict == KILL_MID_FRAME:
                link.send_raw(raw[: max(5, len(raw) // 2)])
                link.close()
            elif verdict == DROP:
                pass
            else:
                raise ValueError(f"unknown fault verdict {verdict!r}")
        except OSError:
            pass
