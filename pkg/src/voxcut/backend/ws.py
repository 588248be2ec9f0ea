"""Server-side WebSocket framing (RFC 6455), binary messages only.

Just enough of the protocol for streaming: handshake, client-to-server
masking, fragment reassembly, ping/pong and close.  Every application
frame travels as one binary message whose bytes are identical to the raw
TCP framing, so both transports share one codec.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import struct
import threading

import numpy as np

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WebSocketError(Exception):
    pass


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def parse_http_request(raw: bytes) -> tuple[str, str, dict[str, str]]:
    """(method, path, lower-cased headers) of one HTTP/1.1 request head."""
    try:
        head = raw.decode("latin-1")
        lines = head.split("\r\n")
        method, path, _ = lines[0].split(" ", 2)
    except (UnicodeDecodeError, ValueError) as exc:
        raise WebSocketError(f"bad http request: {exc}") from exc
    headers = {}
    for line in lines[1:]:
        if not line:
            break
        name, _, value = line.partition(":")
        headers[name.strip().lower()] = value.strip()
    return method, path, headers


def handshake_response(headers: dict[str, str]) -> bytes:
    key = headers.get("sec-websocket-key")
    if not key or headers.get("upgrade", "").lower() != "websocket":
        raise WebSocketError("not a websocket upgrade request")
    return (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
        "\r\n"
    ).encode("ascii")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionError("peer closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _unmask(data: bytes, key: bytes) -> bytes:
    if not data:
        return data
    arr = np.frombuffer(data, dtype=np.uint8)
    mask = np.frombuffer((key * (len(data) // 4 + 1))[: len(data)], dtype=np.uint8)
    return (arr ^ mask).tobytes()


class WebSocketConnection:
    """One accepted server-side connection after a successful handshake."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._send_lock = threading.Lock()
        self.closed = False

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        header = bytearray([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header.append(n)
        elif n < 1 << 16:
            header.append(126)
            header += struct.pack(">H", n)
        else:
            header.append(127)
            header += struct.pack(">Q", n)
        with self._send_lock:
            self._sock.sendall(bytes(header) + payload)

    def send_binary(self, payload: bytes) -> None:
        self._send_frame(OP_BINARY, payload)

    def close(self, code: int = 1000) -> None:
        if not self.closed:
            self.closed = True
            try:
                self._send_frame(OP_CLOSE, struct.pack(">H", code))
            except OSError:
                pass

    def recv_message(self) -> bytes | None:
        """Next complete binary message; None once the peer closed."""
        fragments: list[bytes] = []
        while True:
            b0, b1 = _recv_exact(self._sock, 2)
            fin = bool(b0 & 0x80)
            opcode = b0 & 0x0F
            masked = bool(b1 & 0x80)
            length = b1 & 0x7F
            if length == 126:
                (length,) = struct.unpack(">H", _recv_exact(self._sock, 2))
            elif length == 127:
                (length,) = struct.unpack(">Q", _recv_exact(self._sock, 8))
            key = _recv_exact(self._sock, 4) if masked else b""
            payload = _recv_exact(self._sock, length) if length else b""
            if masked:
                payload = _unmask(payload, key)
            elif opcode in (OP_BINARY, OP_TEXT, OP_CONT):
                raise WebSocketError("client frames must be masked")

            if opcode == OP_PING:
                self._send_frame(OP_PONG, payload)
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                self.close()
                return None
            if opcode in (OP_BINARY, OP_TEXT) or (opcode == OP_CONT and fragments):
                fragments.append(payload)
                if fin:
                    return b"".join(fragments)
                continue
            raise WebSocketError(f"unexpected opcode {opcode}")
