"""Single-round client/server wire protocol.

One query message carries the ring parameters, the public key and the
encrypted query coordinates; one response carries the encrypted class bit
of every repetition.  Messages are self-delimiting, little-endian, and
their sizes are independent of the database size.
"""

from __future__ import annotations

import socket
import struct
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import he_sim
from .classifier import LabeledDatabase, ProtocolParams, server_classify
from .he_sim import Cipher, PublicKey
from .primitives import derive_seed
from .ring import ParameterError, RingParams

MAGIC = b"KISH"
PROTOCOL_VERSION = 1

_KIND_QUERY = 1
_KIND_RESPONSE = 2
_KIND_ERROR = 3

_CIPHER_STRUCT = struct.Struct("<QHQ")  # value blob, depth, key id
_RING_STRUCT = struct.Struct("<QQQQQ")


class TransportError(ConnectionError):
    """The underlying byte stream failed or ended mid-message."""


class ProtocolError(RuntimeError):
    """The peer sent a well-formed but unacceptable message."""


class DecodeError(ValueError):
    """Malformed message bytes; `offset` points at the defect."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"at byte {offset}: {reason}")
        self.offset = offset


@dataclass(frozen=True)
class QueryMessage:
    protocol_version: int
    ring: RingParams
    pk: bytes  # opaque 8-byte key identifier
    enc_q: tuple  # one scalar ciphertext per coordinate

    def __post_init__(self):
        if self.protocol_version != PROTOCOL_VERSION:
            raise ParameterError("unsupported protocol version")
        if len(self.enc_q) != self.ring.dim:
            raise ParameterError("query dimension does not match ring")

    def __eq__(self, other):
        return (isinstance(other, QueryMessage)
                and self.protocol_version == other.protocol_version
                and self.ring == other.ring
                and self.pk == other.pk
                and _cipher_states(self.enc_q) == _cipher_states(other.enc_q))


@dataclass(frozen=True)
class ResponseMessage:
    enc_class: tuple  # one scalar ciphertext per repetition

    def __post_init__(self):
        if len(self.enc_class) % 2 != 1:
            raise ParameterError("repetition count must be odd")

    def __eq__(self, other):
        return (isinstance(other, ResponseMessage)
                and _cipher_states(self.enc_class) == _cipher_states(other.enc_class))


@dataclass(frozen=True)
class ErrorMessage:
    reason: str


def _cipher_states(ciphers) -> tuple:
    return tuple((int(c._values[0]), c.depth, c.key_id) for c in ciphers)


def _encode_cipher(c: Cipher) -> bytes:
    if c.size != 1:
        raise ParameterError("only scalar ciphertexts travel on the wire")
    return _CIPHER_STRUCT.pack(int(c._values[0]), c.depth, c.key_id)


def _decode_cipher(blob: bytes, offset: int) -> Cipher:
    if len(blob) != _CIPHER_STRUCT.size:
        raise DecodeError(offset, "ciphertext field has wrong length")
    value, depth, key_id = _CIPHER_STRUCT.unpack(blob)
    return Cipher(np.array([value], dtype=np.int64), depth=depth, key_id=key_id)


def _encode_ring(ring: RingParams) -> bytes:
    return _RING_STRUCT.pack(ring.modulus, ring.coord_bound, ring.dim,
                             ring.dist_bound, ring.n)


def _decode_ring(blob: bytes, offset: int) -> RingParams:
    if len(blob) != _RING_STRUCT.size:
        raise DecodeError(offset, "ring parameter field has wrong length")
    try:
        return RingParams(*_RING_STRUCT.unpack(blob))
    except ParameterError as exc:
        raise DecodeError(offset, f"invalid ring parameters: {exc}") from exc


def encode_message(msg) -> bytes:
    """Serialize a message: magic, version, kind, then length-prefixed fields."""
    if isinstance(msg, QueryMessage):
        kind = _KIND_QUERY
        fields = [_encode_ring(msg.ring), bytes(msg.pk)]
        fields += [_encode_cipher(c) for c in msg.enc_q]
    elif isinstance(msg, ResponseMessage):
        kind = _KIND_RESPONSE
        fields = [_encode_cipher(c) for c in msg.enc_class]
    elif isinstance(msg, ErrorMessage):
        kind = _KIND_ERROR
        fields = [msg.reason.encode("utf-8")]
    else:
        raise ParameterError(f"cannot encode {type(msg).__name__}")
    out = bytearray()
    out += MAGIC
    out.append(PROTOCOL_VERSION)
    out.append(kind)
    out += struct.pack("<I", len(fields))
    for field in fields:
        out += struct.pack("<I", len(field))
        out += field
    return bytes(out)


def decode_message(data: bytes):
    """Parse one message; raises DecodeError with the offending byte offset."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise DecodeError(0, "bad magic")
    if len(data) < 5 or data[4] != PROTOCOL_VERSION:
        raise DecodeError(min(4, len(data)), "unsupported version")
    if len(data) < 10:
        raise DecodeError(len(data), "truncated header")
    kind = data[5]
    (nfields,) = struct.unpack_from("<I", data, 6)
    pos = 10
    fields = []
    offsets = []
    for _ in range(nfields):
        if pos + 4 > len(data):
            raise DecodeError(len(data), "truncated field length")
        (flen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + flen > len(data):
            raise DecodeError(len(data), "truncated field payload")
        offsets.append(pos)
        fields.append(data[pos:pos + flen])
        pos += flen
    if pos != len(data):
        raise DecodeError(pos, "trailing bytes after message")
    if kind == _KIND_QUERY:
        if len(fields) < 3:
            raise DecodeError(len(data), "query needs ring, key and coordinates")
        ring = _decode_ring(fields[0], offsets[0])
        enc_q = tuple(_decode_cipher(f, o)
                      for f, o in zip(fields[2:], offsets[2:]))
        try:
            return QueryMessage(PROTOCOL_VERSION, ring, bytes(fields[1]), enc_q)
        except ParameterError as exc:
            raise DecodeError(offsets[0], str(exc)) from exc
    if kind == _KIND_RESPONSE:
        if not fields:
            raise DecodeError(len(data), "empty response")
        enc = tuple(_decode_cipher(f, o) for f, o in zip(fields, offsets))
        try:
            return ResponseMessage(enc)
        except ParameterError as exc:
            raise DecodeError(offsets[0], str(exc)) from exc
    if kind == _KIND_ERROR:
        if len(fields) != 1:
            raise DecodeError(len(data), "error message needs one field")
        return ErrorMessage(fields[0].decode("utf-8", errors="replace"))
    raise DecodeError(5, f"unknown message kind {kind}")


# ---------------------------------------------------------------------------
# Transports: any reliable ordered byte stream, exposed as a file pair.


class Transport:
    """A reliable ordered byte stream with buffered binary file endpoints."""

    def __init__(self, rfile, wfile, closer=None):
        self.rfile = rfile
        self.wfile = wfile
        self._closer = closer

    def close(self) -> None:
        for f in (self.rfile, self.wfile):
            try:
                f.close()
            except OSError:
                pass
        if self._closer is not None:
            self._closer()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _socket_transport(sock: socket.socket) -> Transport:
    return Transport(sock.makefile("rb"), sock.makefile("wb"),
                     closer=sock.close)


def loopback_pair() -> tuple:
    """In-process transport pair (client_end, server_end)."""
    a, b = socket.socketpair()
    return _socket_transport(a), _socket_transport(b)


def tcp_connect(host: str, port: int) -> Transport:
    try:
        sock = socket.create_connection((host, port))
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    return _socket_transport(sock)


def stdio_transport() -> Transport:
    return Transport(sys.stdin.buffer, sys.stdout.buffer)


def _read_exact(rfile, count: int, *, allow_eof_at_start=False):
    try:
        data = rfile.read(count)
    except OSError as exc:
        raise TransportError(f"read failed: {exc}") from exc
    if data is None:
        data = b""
    if not data and count and allow_eof_at_start:
        return None
    if len(data) != count:
        raise TransportError("stream ended mid-message")
    return data


def read_message(transport: Transport, *, allow_eof=False):
    """Read one self-delimiting message from the stream.

    Returns None on clean end-of-stream when allow_eof is set.
    """
    rfile = transport.rfile
    head = _read_exact(rfile, 10, allow_eof_at_start=allow_eof)
    if head is None:
        return None
    buf = bytearray(head)
    if head[:4] != MAGIC:
        raise DecodeError(0, "bad magic")
    (nfields,) = struct.unpack_from("<I", head, 6)
    for _ in range(nfields):
        lenb = _read_exact(rfile, 4)
        buf += lenb
        (flen,) = struct.unpack("<I", lenb)
        buf += _read_exact(rfile, flen)
    return decode_message(bytes(buf))


def write_message(transport: Transport, msg) -> None:
    try:
        transport.wfile.write(encode_message(msg))
        transport.wfile.flush()
    except OSError as exc:
        raise TransportError(f"write failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Roles.


def make_query(query, pp: ProtocolParams):
    """Client-side key generation and query encryption."""
    keys = he_sim.keygen(pp.ring, derive_seed(pp.rng_seed, "keys"))
    enc_q = tuple(he_sim.encrypt(keys.pk, int(c) % pp.ring.modulus)
                  for c in query)
    msg = QueryMessage(PROTOCOL_VERSION, pp.ring,
                       keys.pk.key_id.to_bytes(8, "little"), enc_q)
    return keys, msg


def answer_query(msg: QueryMessage, db: LabeledDatabase, pp: ProtocolParams):
    """Server-side batch: one seeded circuit instance per repetition.

    Raises ProtocolError on parameter mismatch; never decrypts anything.
    """
    if msg.ring != pp.ring:
        raise ProtocolError("ring parameters do not match the served database")
    if len(msg.enc_q) != pp.ring.dim:
        raise ProtocolError("query dimension mismatch")
    pk = PublicKey(int.from_bytes(msg.pk, "little"), pp.ring.modulus)
    bits = []
    for rep in range(pp.repetitions):
        pp_rep = replace(pp, rng_seed=derive_seed(pp.rng_seed, f"rep-{rep}"))
        bits.append(server_classify(pk, list(msg.enc_q), db, pp_rep))
    return ResponseMessage(tuple(bits))


def run_server(transport: Transport, db: LabeledDatabase,
               pp: ProtocolParams) -> int:
    """Serve queries on one connection until the peer closes it.

    Parameter mismatches get an error response; malformed bytes close the
    connection.  The connection is closed before returning.  Returns the
    number of queries answered.
    """
    answered = 0
    try:
        while True:
            try:
                msg = read_message(transport, allow_eof=True)
            except DecodeError as exc:
                write_message(transport,
                              ErrorMessage(f"malformed message: {exc}"))
                return answered
            if msg is None:
                return answered
            if not isinstance(msg, QueryMessage):
                write_message(transport,
                              ErrorMessage("expected a query message"))
                return answered
            try:
                write_message(transport, answer_query(msg, db, pp))
                answered += 1
            except ProtocolError as exc:
                write_message(transport, ErrorMessage(str(exc)))
    finally:
        transport.close()


def run_client(transport: Transport, query, pp: ProtocolParams) -> int:
    """Send one query, decrypt the response bits, return the majority."""
    keys, msg = make_query(query, pp)
    write_message(transport, msg)
    reply = read_message(transport)
    if isinstance(reply, ErrorMessage):
        raise ProtocolError(f"server rejected the query: {reply.reason}")
    if not isinstance(reply, ResponseMessage):
        raise ProtocolError("unexpected message kind in response")
    votes = sum(he_sim.decrypt(keys.sk, c) for c in reply.enc_class)
    return 1 if 2 * votes > len(reply.enc_class) else 0


def serve_tcp(host: str, port: int, db: LabeledDatabase, pp: ProtocolParams,
              *, max_connections=None, ready=None) -> None:
    """Accept TCP connections and serve each one serially."""
    with socket.create_server((host, port)) as listener:
        if ready is not None:
            ready(listener.getsockname())
        served = 0
        while max_connections is None or served < max_connections:
            conn, _addr = listener.accept()
            with _socket_transport(conn) as transport:
                run_server(transport, db, pp)
            served += 1
