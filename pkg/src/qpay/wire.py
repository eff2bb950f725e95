"""Length-prefixed binary framing and transports for the payment protocol.

Frame layout (all integers little-endian):

    u32 length   -- byte count of everything after this field
    u8  version  -- protocol version, currently 1
    u8  type     -- message type code
    ...payload   -- type-specific body

Message types: ISSUE(1), TOKEN_CHUNK(2), CRYPTOGRAM(3), VERIFY_REQ(4),
DECISION(5). Quantum tokens are streamed in chunks of at most 2^16
positions. Strings are u16-length-prefixed UTF-8. Measurement outcomes
travel as 2-bit codes (0, 1, 2 = no click), four per byte.

Client- and merchant-originated messages (CRYPTOGRAM, VERIFY_REQ) carry
only token id, merchant id and outcomes; analyzer bases and MAC tags have
no field in the schema, which is asserted by tests.

The same frame bytes move over either transport: an in-process queue pair
or a loopback TCP socket.
"""

from __future__ import annotations

import queue
import socket
import struct
from dataclasses import dataclass, fields

import numpy as np

from .quantum import QuantumToken

WIRE_VERSION = 1
CHUNK_POSITIONS = 1 << 16

MSG_ISSUE = 1
MSG_TOKEN_CHUNK = 2
MSG_CRYPTOGRAM = 3
MSG_VERIFY_REQ = 4
MSG_DECISION = 5


class TransportError(RuntimeError):
    """Connection or framing failures on a protocol channel."""


@dataclass
class IssueMsg:
    client_id: str
    token_length: int


@dataclass
class TokenChunkMsg:
    token_id: str
    total_length: int
    chunk_index: int
    chunk_count: int
    start: int
    count: int
    flip_hv: float
    flip_da: float
    state_codes: bytes  # 2-bit (bit<<1)|basis per position
    photon_counts: bytes  # 2-bit count per position, clamped at 3


@dataclass
class CryptogramMsg:
    token_id: str
    merchant: bytes
    outcomes: bytes  # 2-bit codes
    length: int


@dataclass
class VerifyReqMsg:
    token_id: str
    merchant: bytes
    outcomes: bytes
    length: int


@dataclass
class DecisionMsg:
    token_id: str
    accepted: bool
    measured_error: float
    measured_loss: float
    checked_count: int
    reason: str


Message = IssueMsg | TokenChunkMsg | CryptogramMsg | VerifyReqMsg | DecisionMsg

# Schema registry: message type code -> dataclass. Tests introspect this to
# assert basis privacy at the schema level.
SCHEMA: dict[int, type] = {
    MSG_ISSUE: IssueMsg,
    MSG_TOKEN_CHUNK: TokenChunkMsg,
    MSG_CRYPTOGRAM: CryptogramMsg,
    MSG_VERIFY_REQ: VerifyReqMsg,
    MSG_DECISION: DecisionMsg,
}
CLIENT_ORIGIN_TYPES = (MSG_CRYPTOGRAM,)
MERCHANT_ORIGIN_TYPES = (MSG_VERIFY_REQ,)


def message_field_names(msg_type: int) -> tuple[str, ...]:
    return tuple(f.name for f in fields(SCHEMA[msg_type]))


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    return buf[off : off + n].decode("utf-8"), off + n


def _pack_bytes(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def _unpack_bytes(buf: bytes, off: int) -> tuple[bytes, int]:
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    return buf[off : off + n], off + n


def pack_outcomes(outcomes: np.ndarray) -> bytes:
    v = np.asarray(outcomes, dtype=np.uint8)
    padded = np.zeros((v.size + 3) // 4 * 4, dtype=np.uint8)
    padded[: v.size] = v & 0b11
    quads = padded.reshape(-1, 4)
    return (quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)).tobytes()


def unpack_outcomes(buf: bytes, count: int) -> np.ndarray:
    packed = np.frombuffer(buf, dtype=np.uint8)
    out = np.empty(packed.size * 4, dtype=np.uint8)
    out[0::4] = packed & 0b11
    out[1::4] = (packed >> 2) & 0b11
    out[2::4] = (packed >> 4) & 0b11
    out[3::4] = (packed >> 6) & 0b11
    return out[:count]


def encode_message(msg: Message) -> bytes:
    if isinstance(msg, IssueMsg):
        mtype, body = MSG_ISSUE, _pack_str(msg.client_id) + struct.pack("<Q", msg.token_length)
    elif isinstance(msg, TokenChunkMsg):
        mtype = MSG_TOKEN_CHUNK
        body = (
            _pack_str(msg.token_id)
            + struct.pack(
                "<QIIQIdd",
                msg.total_length,
                msg.chunk_index,
                msg.chunk_count,
                msg.start,
                msg.count,
                msg.flip_hv,
                msg.flip_da,
            )
            + _pack_bytes(msg.state_codes)
            + _pack_bytes(msg.photon_counts)
        )
    elif isinstance(msg, CryptogramMsg):
        mtype = MSG_CRYPTOGRAM
        body = (
            _pack_str(msg.token_id)
            + _pack_bytes(msg.merchant)
            + struct.pack("<Q", msg.length)
            + _pack_bytes(msg.outcomes)
        )
    elif isinstance(msg, VerifyReqMsg):
        mtype = MSG_VERIFY_REQ
        body = (
            _pack_str(msg.token_id)
            + _pack_bytes(msg.merchant)
            + struct.pack("<Q", msg.length)
            + _pack_bytes(msg.outcomes)
        )
    elif isinstance(msg, DecisionMsg):
        mtype = MSG_DECISION
        body = _pack_str(msg.token_id) + struct.pack(
            "<BddQ", int(msg.accepted), msg.measured_error, msg.measured_loss, msg.checked_count
        ) + _pack_str(msg.reason)
    else:
        raise TypeError(f"unknown message {type(msg).__name__}")
    payload = struct.pack("<BB", WIRE_VERSION, mtype) + body
    return struct.pack("<I", len(payload)) + payload


def decode_message(payload: bytes) -> Message:
    version, mtype = struct.unpack_from("<BB", payload, 0)
    if version != WIRE_VERSION:
        raise TransportError(f"unsupported wire version {version}")
    off = 2
    if mtype == MSG_ISSUE:
        client_id, off = _unpack_str(payload, off)
        (token_length,) = struct.unpack_from("<Q", payload, off)
        return IssueMsg(client_id, token_length)
    if mtype == MSG_TOKEN_CHUNK:
        token_id, off = _unpack_str(payload, off)
        total, idx, cnt, start, count, fhv, fda = struct.unpack_from("<QIIQIdd", payload, off)
        off += struct.calcsize("<QIIQIdd")
        codes, off = _unpack_bytes(payload, off)
        photons, off = _unpack_bytes(payload, off)
        return TokenChunkMsg(token_id, total, idx, cnt, start, count, fhv, fda, codes, photons)
    if mtype in (MSG_CRYPTOGRAM, MSG_VERIFY_REQ):
        token_id, off = _unpack_str(payload, off)
        merchant, off = _unpack_bytes(payload, off)
        (length,) = struct.unpack_from("<Q", payload, off)
        off += 8
        outcomes, off = _unpack_bytes(payload, off)
        cls = CryptogramMsg if mtype == MSG_CRYPTOGRAM else VerifyReqMsg
        return cls(token_id, merchant, outcomes, length)
    if mtype == MSG_DECISION:
        token_id, off = _unpack_str(payload, off)
        accepted, err, loss, checked = struct.unpack_from("<BddQ", payload, off)
        off += struct.calcsize("<BddQ")
        reason, off = _unpack_str(payload, off)
        return DecisionMsg(token_id, bool(accepted), err, loss, checked, reason)
    raise TransportError(f"unknown message type {mtype}")


def token_to_chunks(token: QuantumToken) -> list[TokenChunkMsg]:
    """Split a token into wire chunks of at most CHUNK_POSITIONS positions."""
    n = len(token)
    starts = list(range(0, n, CHUNK_POSITIONS))
    chunks = []
    codes_all = (token.bits << 1) | token.bases
    counts_all = np.minimum(token.photons, 3)
    for i, start in enumerate(starts):
        stop = min(start + CHUNK_POSITIONS, n)
        chunks.append(
            TokenChunkMsg(
                token_id=token.token_id,
                total_length=n,
                chunk_index=i,
                chunk_count=len(starts),
                start=start,
                count=stop - start,
                flip_hv=token.flip_hv,
                flip_da=token.flip_da,
                state_codes=pack_outcomes(codes_all[start:stop]),
                photon_counts=pack_outcomes(counts_all[start:stop]),
            )
        )
    return chunks


def token_from_chunks(chunks: list[TokenChunkMsg]) -> QuantumToken:
    if not chunks:
        raise TransportError("no token chunks received")
    chunks = sorted(chunks, key=lambda c: c.chunk_index)
    total = chunks[0].total_length
    bits = np.empty(total, dtype=np.uint8)
    bases = np.empty(total, dtype=np.uint8)
    photons = np.empty(total, dtype=np.uint8)
    for c in chunks:
        codes = unpack_outcomes(c.state_codes, c.count)
        bits[c.start : c.start + c.count] = (codes >> 1) & 1
        bases[c.start : c.start + c.count] = codes & 1
        photons[c.start : c.start + c.count] = unpack_outcomes(c.photon_counts, c.count)
    return QuantumToken(
        token_id=chunks[0].token_id,
        bits=bits,
        bases=bases,
        photons=photons,
        flip_hv=chunks[0].flip_hv,
        flip_da=chunks[0].flip_da,
    )


class Transport:
    """Bidirectional ordered message channel."""

    def send(self, msg: Message) -> None:
        raise NotImplementedError

    def recv(self) -> Message:
        raise NotImplementedError

    def close(self) -> None:
        pass


class QueueTransport(Transport):
    """In-process endpoint; frames still pass through the binary codec."""

    def __init__(self, out_q: "queue.Queue[bytes]", in_q: "queue.Queue[bytes]"):
        self._out = out_q
        self._in = in_q

    @classmethod
    def pair(cls) -> tuple["QueueTransport", "QueueTransport"]:
        a: "queue.Queue[bytes]" = queue.Queue()
        b: "queue.Queue[bytes]" = queue.Queue()
        return cls(a, b), cls(b, a)

    def send(self, msg: Message) -> None:
        self._out.put(encode_message(msg))

    def recv(self) -> Message:
        frame = self._in.get(timeout=60)
        (length,) = struct.unpack_from("<I", frame, 0)
        if length != len(frame) - 4:
            raise TransportError("frame length mismatch")
        return decode_message(frame[4:])


class SocketTransport(Transport):
    """Loopback TCP endpoint with the same framing."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = b""

    def send(self, msg: Message) -> None:
        try:
            self._sock.sendall(encode_message(msg))
        except OSError as exc:
            raise TransportError(str(exc)) from exc

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            try:
                data = self._sock.recv(1 << 20)
            except OSError as exc:
                raise TransportError(str(exc)) from exc
            if not data:
                raise TransportError("peer closed the connection")
            self._buf += data
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def recv(self) -> Message:
        (length,) = struct.unpack("<I", self._read_exact(4))
        return decode_message(self._read_exact(length))

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
