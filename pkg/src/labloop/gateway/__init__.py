"""Framed, multiplexed, reconnecting message link between the orchestrator
and on-premises adapters. Adapters always dial out; the orchestrator only
listens. See docs/gateway-protocol.md for the wire format."""

from .frames import (
    MAX_BODY_BYTES,
    FrameTooLarge,
    MalformedBody,
    Message,
    MessageType,
    ProtocolError,
    decode_frames,
    encode_frame,
)
from .session import (
    REPLAY_CACHE_SIZE,
    AdapterSession,
    ReplayCache,
    dispatch_request,
    handshake,
    reconnect_delay,
)
from .server import GatewayError, GatewayServer, GatewayTimeout
from .client import AdapterClient

__all__ = [
    "AdapterClient",
    "AdapterSession",
    "FrameTooLarge",
    "GatewayError",
    "GatewayServer",
    "GatewayTimeout",
    "MalformedBody",
    "MAX_BODY_BYTES",
    "Message",
    "MessageType",
    "ProtocolError",
    "REPLAY_CACHE_SIZE",
    "ReplayCache",
    "decode_frames",
    "dispatch_request",
    "encode_frame",
    "handshake",
    "reconnect_delay",
]
