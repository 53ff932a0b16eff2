"""Length-prefixed framing and the duplex channel between client and server.

Frame layout (little-endian)::

    b"HECN" | version u8 | msg_type u8 | payload_len u64 | payload

Result and ciphertext payloads are bare fixed-width residues; the count
follows from the payload length.  Initialization payloads start with a
u32 poly count.  ``RELU_MASKED`` payloads start with a u64 mask nonce.
"""

from __future__ import annotations

import enum
import queue
import socket
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FrameError, ProtocolError
from .ring import LEVEL_Q, LEVEL_QP, RingParams, residues_from_bytes, residues_to_bytes

MAGIC = b"HECN"
VERSION = 1
_HEADER = struct.Struct("<4sBBQ")
HEADER_SIZE = _HEADER.size
NONCE_SIZE = 8


class MsgType(enum.IntEnum):
    CONV_INIT = 1
    CONV_C0 = 2
    CONV_RESULT = 3
    FC_INIT = 4
    FC_C0 = 5
    FC_RESULT = 6
    RELU_MASKED = 7
    RELU_REENC = 8


INIT_TYPES = frozenset({MsgType.CONV_INIT, MsgType.FC_INIT})
C2S_TYPES = frozenset({MsgType.CONV_C0, MsgType.FC_C0, MsgType.RELU_REENC})


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    payload: bytes
    version: int = VERSION

    def __len__(self) -> int:
        return HEADER_SIZE + len(self.payload)


def frame(msg: WireMessage) -> bytes:
    return _HEADER.pack(MAGIC, msg.version, int(msg.msg_type), len(msg.payload)) + msg.payload


def _parse_header(header: bytes) -> tuple[MsgType, int]:
    if len(header) < HEADER_SIZE:
        raise FrameError(f"truncated header: {len(header)} of {HEADER_SIZE} bytes")
    magic, version, mtype, plen = _HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported version {version}")
    try:
        return MsgType(mtype), plen
    except ValueError:
        raise FrameError(f"unknown message type {mtype}") from None


def deframe(data: bytes) -> WireMessage:
    """Parse exactly one frame; trailing or missing bytes are errors."""
    mtype, plen = _parse_header(data)
    body = data[HEADER_SIZE:]
    if len(body) != plen:
        raise FrameError(f"payload length {len(body)} does not match header {plen}")
    return WireMessage(mtype, bytes(body))


# -- payload codecs ----------------------------------------------------------

def pack_polys(polys) -> bytes:
    """u32 count followed by each poly at its own modulus width."""
    polys = list(polys)
    return struct.pack("<I", len(polys)) + b"".join(p.to_bytes() for p in polys)


def unpack_polys(data: bytes, params: RingParams, level: str = LEVEL_Q) -> list:
    from .ring import Poly

    if len(data) < 4:
        raise FrameError("truncated poly list")
    (count,) = struct.unpack_from("<I", data)
    size = params.N * params.width(level)
    if len(data) != 4 + count * size:
        raise FrameError(f"poly list of {count} needs {4 + count * size} bytes, got {len(data)}")
    return [Poly.from_bytes(params, data[4 + j * size: 4 + (j + 1) * size], level)
            for j in range(count)]


def pack_residues(values, params: RingParams, level: str) -> bytes:
    return residues_to_bytes(values, params.modulus(level))


def unpack_residues(data: bytes, params: RingParams, level: str) -> np.ndarray:
    if len(data) % params.width(level):
        raise FrameError("payload is not a whole number of residues")
    return residues_from_bytes(data, params.modulus(level))


def pack_masked(nonce: int, values, params: RingParams) -> bytes:
    return struct.pack("<Q", nonce) + pack_residues(values, params, LEVEL_QP)


def unpack_masked(data: bytes, params: RingParams) -> tuple[int, np.ndarray]:
    if len(data) < NONCE_SIZE:
        raise FrameError("truncated masked payload")
    (nonce,) = struct.unpack_from("<Q", data)
    return nonce, unpack_residues(data[NONCE_SIZE:], params, LEVEL_QP)


def residue_count(msg: WireMessage, params: RingParams) -> int:
    """Residues carried by a per-inference message (0 for initialization)."""
    t = msg.msg_type
    if t in INIT_TYPES:
        return 0
    if t in C2S_TYPES:
        return len(msg.payload) // params.width(LEVEL_Q)
    body = len(msg.payload) - (NONCE_SIZE if t is MsgType.RELU_MASKED else 0)
    return body // params.width(LEVEL_QP)


# -- channels ----------------------------------------------------------------

class Endpoint:
    """One side of a reliable ordered link; counts every frame it sends."""

    def __init__(self, direction: str, params: RingParams, counters=None):
        self.direction = direction
        self.params = params
        self.counters = counters

    def _account(self, msg: WireMessage, nbytes: int):
        if self.counters is not None:
            self.counters.add_wire(self.direction, nbytes, residue_count(msg, self.params),
                                   init=msg.msg_type in INIT_TYPES)

    def send(self, msg: WireMessage) -> None:
        data = frame(msg)
        self._send_bytes(data)
        self._account(msg, len(data))

    def recv(self, expect: MsgType | None = None, timeout: float | None = None) -> WireMessage:
        msg = deframe(self._recv_bytes(timeout))
        if expect is not None and msg.msg_type != expect:
            raise ProtocolError(f"expected {expect.name}, got {msg.msg_type.name}")
        return msg

    def poll(self) -> bool:
        raise NotImplementedError

    def _send_bytes(self, data: bytes):
        raise NotImplementedError

    def _recv_bytes(self, timeout):
        raise NotImplementedError


class QueueEndpoint(Endpoint):
    def __init__(self, direction, params, outbox: queue.Queue, inbox: queue.Queue, counters=None):
        super().__init__(direction, params, counters)
        self._out, self._in = outbox, inbox

    def _send_bytes(self, data: bytes):
        self._out.put(data)

    def _recv_bytes(self, timeout):
        try:
            return self._in.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError("receive timed out") from None

    def poll(self) -> bool:
        return not self._in.empty()


def duplex_channel(params: RingParams, counters=None) -> tuple[Endpoint, Endpoint]:
    """In-process link; returns (client_end, server_end)."""
    c2s, s2c = queue.Queue(), queue.Queue()
    client = QueueEndpoint("c2s", params, c2s, s2c, counters)
    server = QueueEndpoint("s2c", params, s2c, c2s, counters)
    return client, server


class SocketEndpoint(Endpoint):
    """The same framing over a stream socket."""

    def __init__(self, direction, params, sock: socket.socket, counters=None):
        super().__init__(direction, params, counters)
        self.sock = sock

    def _send_bytes(self, data: bytes):
        self.sock.sendall(data)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise FrameError(f"connection closed after {len(buf)} of {n} bytes")
            buf += chunk
        return bytes(buf)

    def _recv_bytes(self, timeout):
        self.sock.settimeout(timeout)
        try:
            header = self._read_exact(HEADER_SIZE)
            _, plen = _parse_header(header)
            return header + self._read_exact(plen)
        except socket.timeout:
            raise ProtocolError("receive timed out") from None

    def poll(self) -> bool:
        import select

        return bool(select.select([self.sock], [], [], 0)[0])


def socket_channel(params: RingParams, counters=None) -> tuple[Endpoint, Endpoint]:
    a, b = socket.socketpair()
    return SocketEndpoint("c2s", params, a, counters), SocketEndpoint("s2c", params, b, counters)
