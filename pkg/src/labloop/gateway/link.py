"""One framed connection over a connected socket.

Sends are serialized under a lock so concurrent writers cannot interleave
frame bytes. Message ids are minted per link, satisfying the per-connection
uniqueness rule.
"""

import itertools
import socket
import threading
import time

from .frames import Message, MessageType, ProtocolError, decode_frames, encode_frame

RECV_CHUNK = 65536


class Link:
    def __init__(self, sock: socket.socket, side: str):
        self._sock = sock
        self._side = side
        self._send_lock = threading.Lock()
        self._counter = itertools.count(1)
        self.last_rx = time.monotonic()
        self.closed = False

    def next_id(self) -> str:
        return f"{self._side}{next(self._counter)}"

    def send(self, mtype: MessageType, ts: int, payload: dict | None = None,
             corr_id: str | None = None) -> Message:
        msg = Message(type=mtype, id=self.next_id(), ts=ts,
                      payload=payload or {}, corr_id=corr_id)
        raw = encode_frame(msg)
        with self._send_lock:
            self._sock.sendall(raw)
        return msg

    def send_raw(self, raw: bytes) -> None:
        with self._send_lock:
            self._sock.sendall(raw)

    def close(self) -> None:
        self.closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass

    def messages(self, tick_s: float = 0.2):
        """Yield inbound messages, with None ticks so callers can run
        liveness checks; returns on EOF, close, or a framing error."""
        self._sock.settimeout(tick_s)
        buffer = b""
        while not self.closed:
            try:
                chunk = self._sock.recv(RECV_CHUNK)
            except socket.timeout:
                yield None
                continue
            except OSError:
                return
            if not chunk:
                return
            buffer += chunk
            try:
                decoded, buffer = decode_frames(buffer)
            except ProtocolError:
                return
            if decoded:
                self.last_rx = time.monotonic()
            for msg in decoded:
                yield msg
