"""Session-level rules: authentication, replay-safe request dispatch, and
the reconnect backoff schedule.

Delivery is at-least-once: a requester may retransmit a REQ whenever the
connection drops before the reply lands. The handler side keeps the replies
for the last 256 correlation ids and replays them verbatim, so a retried
request never re-executes its handler.
"""

import hmac
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

from .frames import Message, MessageType

REPLAY_CACHE_SIZE = 256


class ReplayCache:
    """Insertion-ordered corr_id -> reply map, oldest evicted past the cap."""

    def __init__(self, size: int = REPLAY_CACHE_SIZE):
        self._size = size
        self._items: OrderedDict[str, Message] = OrderedDict()

    def get(self, corr_id: str) -> Message | None:
        return self._items.get(corr_id)

    def put(self, corr_id: str, reply: Message) -> None:
        self._items[corr_id] = reply
        while len(self._items) > self._size:
            self._items.popitem(last=False)

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class AdapterSession:
    adapter_id: str
    token: str
    session_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    last_seen: int = 0
    replay_cache: ReplayCache = field(default_factory=ReplayCache)
    # corr_id -> handler invocation count; stays 1 under retries.
    executions: dict[str, int] = field(default_factory=dict)
    in_flight: set[str] = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock)


def handshake(hello: Message, expected_token: str, *, live: bool = False,
              session_id: str | None = None, ts: int = 0) -> Message:
    """Decide the reply to a HELLO: WELCOME on a valid first handshake, ERR
    otherwise. Protocol-level outcome, never an exception."""

    def err(code: str, detail: str) -> Message:
        return Message(type=MessageType.ERR, id="", ts=ts,
                       payload={"code": code, "detail": detail})

    if hello.type != MessageType.HELLO:
        return err("protocol_violation", "expected HELLO")
    if live:
        return err("protocol_violation", "session already established")
    adapter_id = hello.payload.get("adapter_id")
    token = hello.payload.get("token")
    capabilities = hello.payload.get("capabilities")
    if not isinstance(adapter_id, str) or not isinstance(token, str) \
            or not isinstance(capabilities, list):
        return err("protocol_violation", "HELLO needs adapter_id, token, capabilities")
    if not hmac.compare_digest(token, expected_token):
        return err("auth_failed", "bad token")
    return Message(
        type=MessageType.WELCOME,
        id="",
        ts=ts,
        payload={"session_id": session_id or uuid.uuid4().hex,
                 "adapter_id": adapter_id},
    )


def dispatch_request(session: AdapterSession, req: Message, handler) -> Message | None:
    """Execute a REQ exactly once per correlation id.

    A corr_id already answered replays the cached reply; one currently
    executing returns None (the eventual reply goes out when it finishes).
    Handler exceptions become ERR replies and are cached the same way, so
    retries observe a stable outcome.
    """
    if req.type != MessageType.REQ:
        raise ValueError(f"dispatch_request needs a REQ, got {req.type.value}")
    corr_id = req.corr_id or req.id
    with session.lock:
        cached = session.replay_cache.get(corr_id)
        if cached is not None:
            return cached
        if corr_id in session.in_flight:
            return None
        session.in_flight.add(corr_id)
        session.executions[corr_id] = session.executions.get(corr_id, 0) + 1
    try:
        payload = handler(req)
        if not isinstance(payload, dict):
            raise TypeError("handler must return a payload mapping")
        reply = Message(type=MessageType.RSP, id="", ts=req.ts,
                        payload=payload, corr_id=corr_id)
    except Exception as exc:  # noqa: BLE001 — every failure becomes an ERR frame
        reply = Message(
            type=MessageType.ERR,
            id="",
            ts=req.ts,
            payload={"code": "handler_error", "detail": f"{type(exc).__name__}: {exc}"},
            corr_id=corr_id,
        )
    with session.lock:
        session.replay_cache.put(corr_id, reply)
        session.in_flight.discard(corr_id)
    return reply


def reconnect_delay(attempt: int) -> int:
    """Backoff before dial attempt N, in milliseconds: 500, 1000, ... 8000."""
    if attempt < 0:
        raise ValueError("attempt must be >= 0")
    return min(500 * 2 ** attempt, 8000)
