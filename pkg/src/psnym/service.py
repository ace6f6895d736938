"""Publication endpoint for snapshots, deltas and the fake pseudonym list.

Wire format (big-endian). Request frame::

    u32 length | u8 opcode | fields...

    GET_SNAPSHOT  u64 version (LATEST = 2**64 - 1)
    GET_DELTA     u64 from_version | u64 to_version
    GET_FPL       (no fields)
    REPORT_FAKE   u8 lifetime mode (0 overlapping, 1 non-overlapping) | pseudonym bytes

Response frame::

    u32 length | u8 status | u64 fpl_version | u64 latest_version | body

``length`` counts the bytes after the length field. Snapshot and delta bodies
carry a signed trailer ``u16 sig_len | sig`` over the SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .credentials import (
    FakePseudonymList,
    LifetimeMode,
    PcaRegistry,
    Pseudonym,
    SignatureScheme,
    element_key,
    verify_pseudonym,
)
from .errors import CorruptPayload, MalformedRequest, NotAvailable, ReportRejected, VersionMismatch
from .filters import BfDelta, BloomFilter

log = logging.getLogger(__name__)

GET_SNAPSHOT, GET_DELTA, GET_FPL, REPORT_FAKE = 1, 2, 3, 4
OK, MALFORMED, NOT_AVAILABLE, REPORT_REJECTED = 0, 1, 2, 3
LATEST = (1 << 64) - 1
MAX_FRAME = 1 << 30

_LEN = struct.Struct(">I")
_RESP_HEAD = struct.Struct(">BQQ")
_MODES = [LifetimeMode.OVERLAPPING, LifetimeMode.NON_OVERLAPPING]


@dataclass
class Publication:
    version: int
    vehicles: list[str]
    flushed: bool = False


@dataclass
class PublicationState:
    """Registry plus the newcomer buffer that holds back small, linkable updates."""

    registry: PcaRegistry
    v_min: int = 1000
    pending: dict[str, list[bytes]] = field(default_factory=dict)
    log: list[Publication] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.RLock()

    def publish(self) -> tuple[BloomFilter, BfDelta | None]:
        with self._lock:
            snap, delta = self.registry.publish()
            self.log.append(Publication(snap.version, []))
            return snap, delta

    def issue_newcomer(self, vehicle_id: str, count: int, mode=LifetimeMode.NON_OVERLAPPING, window=None):
        """Issue pseudonyms to a vehicle joining mid-period and queue them for batching."""
        with self._lock:
            ps = self.registry.issue_batch(vehicle_id, count, mode, window, insert=False)
            return ps, self.admit_newcomers([(vehicle_id, [element_key(p, mode) for p in ps])])

    def admit_newcomers(self, batch: Iterable[tuple[str, list[bytes]]]) -> Publication | None:
        """Buffer newcomer keys; publish one version once ``v_min`` vehicles are waiting."""
        with self._lock:
            for vehicle_id, keys in batch:
                self.pending.setdefault(vehicle_id, []).extend(keys)
            if len(self.pending) < self.v_min:
                return None
            return self._release(flushed=False)

    def flush(self) -> Publication | None:
        """Administrative release of the buffer regardless of its size."""
        with self._lock:
            if not self.pending:
                return None
            if len(self.pending) < self.v_min:
                log.warning("privacy batching bypassed: flushing %d vehicle(s) < v_min=%d",
                            len(self.pending), self.v_min)
            return self._release(flushed=True)

    def _release(self, flushed: bool) -> Publication:
        vehicles = sorted(self.pending)
        self.registry.admit(k for keys in self.pending.values() for k in keys)
        self.pending.clear()
        snap, _ = self.registry.publish()
        pub = Publication(snap.version, vehicles, flushed)
        self.log.append(pub)
        return pub

    # -- request handling --------------------------------------------------

    def _signed(self, payload: bytes) -> bytes:
        reg = self.registry
        sig = reg.scheme.sign(reg.sk, hashlib.sha256(payload).digest())
        return payload + struct.pack(">H", len(sig)) + sig

    def _report(self, body: bytes) -> bytes:
        if len(body) < 1 or body[0] >= len(_MODES):
            raise MalformedRequest("bad lifetime mode in report")
        try:
            p = Pseudonym.from_bytes(body[1:])
        except CorruptPayload as exc:
            raise MalformedRequest(str(exc)) from exc
        reg = self.registry
        key = element_key(p, _MODES[body[0]])
        rec = reg.issued.get(key)
        genuine = rec is not None and rec.pseudonym == p and verify_pseudonym(p, reg.scheme, reg.pk)
        if genuine:
            raise ReportRejected("reported pseudonym was genuinely issued and carries a valid signature")
        return bytes([1 if reg.fpl_add(key) else 0])

    def handle(self, opcode: int, body: bytes) -> bytes:
        reg = self.registry
        if opcode == GET_SNAPSHOT:
            if len(body) != 8:
                raise MalformedRequest("GET_SNAPSHOT takes one u64")
            (v,) = struct.unpack(">Q", body)
            snap = reg.latest() if v == LATEST else reg.snapshots.get(v)
            if snap is None:
                raise NotAvailable(f"snapshot {v} not retained")
            return self._signed(snap.to_bytes())
        if opcode == GET_DELTA:
            if len(body) != 16:
                raise MalformedRequest("GET_DELTA takes two u64")
            a, b = struct.unpack(">QQ", body)
            if a == b and a in reg.snapshots:
                delta = BfDelta(a, a, [])
            else:
                delta = reg.deltas.get((a, b))
            if delta is None:
                raise NotAvailable(f"no delta {a} -> {b}")
            return self._signed(delta.to_bytes())
        if opcode == GET_FPL:
            if body:
                raise MalformedRequest("GET_FPL takes no fields")
            return reg.fpl.to_bytes()
        if opcode == REPORT_FAKE:
            with self._lock:
                return self._report(body)
        raise MalformedRequest(f"unknown opcode {opcode}")

    def handle_request(self, frame: bytes) -> bytes:
        """Decode one request frame and encode the response frame."""
        try:
            if len(frame) < 5:
                raise MalformedRequest("frame shorter than header")
            (length,) = _LEN.unpack_from(frame)
            if length != len(frame) - 4:
                raise MalformedRequest("length prefix does not match frame size")
            status, body = OK, self.handle(frame[4], frame[5:])
        except MalformedRequest as exc:
            status, body = MALFORMED, str(exc).encode()
        except NotAvailable as exc:
            status, body = NOT_AVAILABLE, str(exc).encode()
        except ReportRejected as exc:
            status, body = REPORT_REJECTED, str(exc).encode()
        reg = self.registry
        payload = _RESP_HEAD.pack(status, reg.fpl.version, reg.version) + body
        return _LEN.pack(len(payload)) + payload


def encode_request(opcode: int, body: bytes = b"") -> bytes:
    return _LEN.pack(len(body) + 1) + bytes([opcode]) + body


@dataclass
class Response:
    status: int
    fpl_version: int
    latest_version: int
    body: bytes


def decode_response(frame: bytes) -> Response:
    if len(frame) < 4 + _RESP_HEAD.size:
        raise CorruptPayload("response frame too short")
    (length,) = _LEN.unpack_from(frame)
    if length != len(frame) - 4:
        raise CorruptPayload("response length mismatch")
    status, fpl_v, latest = _RESP_HEAD.unpack_from(frame, 4)
    return Response(status, fpl_v, latest, frame[4 + _RESP_HEAD.size:])


class PcaClient:
    """Vehicle-side client over any ``bytes -> bytes`` transport."""

    def __init__(self, transport: Callable[[bytes], bytes], scheme: SignatureScheme | None = None,
                 issuer_pk: bytes | None = None):
        self.transport = transport
        self.scheme = scheme
        self.issuer_pk = issuer_pk
        self.last_fpl_version = 0
        self.latest_version = 0

    def _call(self, opcode: int, body: bytes = b"") -> bytes:
        resp = decode_response(self.transport(encode_request(opcode, body)))
        self.last_fpl_version = resp.fpl_version
        self.latest_version = resp.latest_version
        msg = resp.body.decode(errors="replace")
        if resp.status == NOT_AVAILABLE:
            raise NotAvailable(msg)
        if resp.status == REPORT_REJECTED:
            raise ReportRejected(msg)
        if resp.status != OK:
            raise MalformedRequest(msg)
        return resp.body

    def _verified(self, body: bytes) -> bytes:
        payload, sig = _split_trailer(body)
        if self.scheme is not None and self.issuer_pk is not None:
            if not self.scheme.verify(self.issuer_pk, hashlib.sha256(payload).digest(), sig):
                raise CorruptPayload("issuer signature on download does not verify")
        return payload

    def get_snapshot(self, version: int | None = None) -> BloomFilter:
        body = self._call(GET_SNAPSHOT, struct.pack(">Q", LATEST if version is None else version))
        return BloomFilter.from_bytes(self._verified(body))

    def get_delta(self, from_version: int, to_version: int) -> BfDelta:
        body = self._call(GET_DELTA, struct.pack(">QQ", from_version, to_version))
        return BfDelta.from_bytes(self._verified(body))

    def get_fpl(self) -> FakePseudonymList:
        fpl = FakePseudonymList.from_bytes(self._call(GET_FPL))
        if self.scheme is not None and self.issuer_pk is not None and not fpl.verify(self.scheme, self.issuer_pk):
            raise CorruptPayload("FPL signature does not verify")
        return fpl

    def report_fake(self, p: Pseudonym, mode: LifetimeMode) -> bool:
        body = self._call(REPORT_FAKE, bytes([_MODES.index(LifetimeMode(mode))]) + p.to_bytes())
        return body == b"\x01"

    def sync(self, validator) -> str:
        """Bring a validator up to date: FPL, then the delta chain, else a full snapshot."""
        validator.update_fpl(self.get_fpl())  # also refreshes the header versions
        target = self.latest_version
        if validator.version >= target:
            return "current"
        try:
            while validator.version < target:
                validator.apply_update(self.get_delta(validator.version, validator.version + 1))
            return "delta"
        except (NotAvailable, VersionMismatch):
            validator.apply_update(self.get_snapshot())
            return "snapshot"


def _split_trailer(body: bytes) -> tuple[bytes, bytes]:
    # snapshot and delta payloads are self-delimiting, so parse their length directly
    try:
        if body[:4] == b"PBF1":
            cut = 46 + struct.unpack_from(">Q", body, 13)[0] // 8 + 4
        elif body[:4] == b"PBD1":
            cut = _delta_length(body)
        else:
            raise CorruptPayload("unknown signed payload")
    except (IndexError, struct.error) as exc:
        raise CorruptPayload("truncated signed payload") from exc
    if len(body) < cut + 2:
        raise CorruptPayload("missing signature trailer")
    (sig_len,) = struct.unpack_from(">H", body, cut)
    if len(body) != cut + 2 + sig_len:
        raise CorruptPayload("signature trailer length mismatch")
    return body[:cut], body[cut + 2:]


def _delta_length(body: bytes) -> int:
    (count,) = struct.unpack_from(">Q", body, 21)
    i = 29
    for _ in range(count):
        while body[i] & 0x80:
            i += 1
        i += 1
    return i + 4


# -- stream transport -------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    head = _recv_exact(sock, 4)
    (length,) = _LEN.unpack(head)
    if length > MAX_FRAME:
        raise MalformedRequest(f"frame of {length} bytes exceeds limit")
    return head + _recv_exact(sock, length)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        state: PublicationState = self.server.state
        while True:
            try:
                frame = read_frame(self.request)
            except (ConnectionError, MalformedRequest):
                return
            self.request.sendall(state.handle_request(frame))


class PcaServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, state: PublicationState, address=("127.0.0.1", 0)):
        super().__init__(address, _Handler)
        self.state = state


def tcp_transport(host: str, port: int, timeout: float = 10.0) -> Callable[[bytes], bytes]:
    """Transport that opens one connection and reuses it for every request."""
    sock = socket.create_connection((host, port), timeout=timeout)

    def send(frame: bytes) -> bytes:
        sock.sendall(frame)
        return read_frame(sock)

    send.close = sock.close
    return send
