"""Wire format: a 4-byte big-endian length prefix, then a UTF-8 text body.

The body is the key-sorted canonical serialization of
{type, id, corr_id?, ts, payload}. Bodies are capped at 1 MiB, which bounds
buffering on both sides; a prefix above the cap is rejected before the body
arrives.
"""

import json
from dataclasses import dataclass, field
from enum import Enum

from ..canonical import canonicalize

MAX_BODY_BYTES = 1_048_576
PREFIX_BYTES = 4


class ProtocolError(Exception):
    pass


class FrameTooLarge(ProtocolError):
    pass


class MalformedBody(ProtocolError):
    pass


class MessageType(str, Enum):
    HELLO = "HELLO"
    WELCOME = "WELCOME"
    PING = "PING"
    PONG = "PONG"
    REQ = "REQ"
    RSP = "RSP"
    EVT = "EVT"
    ERR = "ERR"


@dataclass(frozen=True)
class Message:
    type: MessageType
    id: str
    ts: int
    payload: dict = field(default_factory=dict)
    corr_id: str | None = None

    def body(self) -> dict:
        doc = {"type": self.type.value, "id": self.id, "ts": self.ts,
               "payload": self.payload}
        if self.corr_id is not None:
            doc["corr_id"] = self.corr_id
        return doc


def encode_frame(msg: Message) -> bytes:
    body = canonicalize(msg.body())
    if len(body) > MAX_BODY_BYTES:
        raise FrameTooLarge(f"body is {len(body)} bytes, cap {MAX_BODY_BYTES}")
    return len(body).to_bytes(PREFIX_BYTES, "big") + body


def _parse_body(body: bytes) -> Message:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedBody(str(exc)) from exc
    if not isinstance(doc, dict):
        raise MalformedBody("body is not a mapping")
    unknown = set(doc) - {"type", "id", "ts", "payload", "corr_id"}
    if unknown:
        raise MalformedBody(f"unknown fields {sorted(unknown)}")
    try:
        mtype = MessageType(doc["type"])
    except (KeyError, ValueError):
        raise MalformedBody("missing or invalid type") from None
    msg_id = doc.get("id")
    if not isinstance(msg_id, str) or not msg_id:
        raise MalformedBody("id must be a nonempty string")
    ts = doc.get("ts")
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise MalformedBody("ts must be an integer")
    payload = doc.get("payload")
    if not isinstance(payload, dict):
        raise MalformedBody("payload must be a mapping")
    corr_id = doc.get("corr_id")
    if corr_id is not None and not isinstance(corr_id, str):
        raise MalformedBody("corr_id must be a string")
    return Message(type=mtype, id=msg_id, ts=ts, payload=payload, corr_id=corr_id)


def decode_frames(buffer: bytes) -> tuple[list[Message], bytes]:
    """Decode every complete frame; return them plus the undecoded tail."""
    messages: list[Message] = []
    offset = 0
    while True:
        if len(buffer) - offset < PREFIX_BYTES:
            break
        length = int.from_bytes(buffer[offset:offset + PREFIX_BYTES], "big")
        if length > MAX_BODY_BYTES:
            raise FrameTooLarge(f"announced body of {length} bytes, cap {MAX_BODY_BYTES}")
        if len(buffer) - offset - PREFIX_BYTES < length:
            break
        start = offset + PREFIX_BYTES
        messages.append(_parse_body(buffer[start:start + length]))
        offset = start + length
    return messages, buffer[offset:]
