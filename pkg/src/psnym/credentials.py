"""Pseudonyms, issuer registry, signature schemes and the fake pseudonym list."""

from __future__ import annotations

import enum
import hashlib
import hmac
import logging
import random
import struct
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .errors import CorruptPayload, UnknownPseudonym, WindowOutsideCoverage
from .filters import BfDelta, BloomFilter, CountingBloomFilter, FilterParams, delta_compute

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.004
DAY = 86_400


# -- signature schemes -------------------------------------------------------

class SignatureScheme(Protocol):
    scheme_id: int
    name: str
    verify_cost: float

    def keygen(self, rng: random.Random) -> tuple[bytes, bytes]: ...

    def sign(self, sk: bytes, msg: bytes) -> bytes: ...

    def verify(self, pk: bytes, msg: bytes, sig: bytes) -> bool: ...


class MockScheme:
    """Hash-based stand-in for a real signature scheme.

    The "signature" is SHA-256 over the public key and message, so anyone can
    forge it. It only exists to make tests fast and byte-reproducible.
    """

    scheme_id = 0
    name = "mock"

    def __init__(self, verify_cost: float = DEFAULT_TAU):
        self.verify_cost = verify_cost

    @staticmethod
    def public_key(sk: bytes) -> bytes:
        return hashlib.sha256(b"psnym-mock-pk" + sk).digest()

    def keygen(self, rng):
        sk = rng.randbytes(32)
        return sk, self.public_key(sk)

    def sign(self, sk, msg):
        return hashlib.sha256(b"psnym-mock-sig" + self.public_key(sk) + msg).digest()

    def verify(self, pk, msg, sig):
        expected = hashlib.sha256(b"psnym-mock-sig" + pk + msg).digest()
        return hmac.compare_digest(expected, sig)


class EcdsaP256Scheme:
    """ECDSA over P-256 with SHA-256 and RFC 6979 nonces.

    Private keys travel as 32-byte scalars, public keys as compressed points.
    """

    scheme_id = 1
    name = "ecdsa-p256"

    def __init__(self, verify_cost: float = DEFAULT_TAU):
        from cryptography.hazmat.primitives import hashes
        from cryptography.hazmat.primitives.asymmetric import ec

        self.verify_cost = verify_cost
        self._ec = ec
        self._curve = ec.SECP256R1()
        self._alg = ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
        # group order of P-256
        self._order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

    def _private(self, sk: bytes):
        return self._ec.derive_private_key(int.from_bytes(sk, "big"), self._curve)

    def keygen(self, rng):
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

        scalar = rng.randrange(1, self._order)
        sk = scalar.to_bytes(32, "big")
        pk = self._private(sk).public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
        return sk, pk

    def sign(self, sk, msg):
        return self._private(sk).sign(msg, self._alg)

    def verify(self, pk, msg, sig):
        from cryptography.exceptions import InvalidSignature

        try:
            key = self._ec.EllipticCurvePublicKey.from_encoded_point(self._curve, pk)
            key.verify(sig, msg, self._alg)
        except (InvalidSignature, ValueError, TypeError):
            return False
        return True


_SCHEMES = {"mock": MockScheme, "ecdsa": EcdsaP256Scheme, "ecdsa-p256": EcdsaP256Scheme}


def get_scheme(name: str = "mock", verify_cost: float = DEFAULT_TAU) -> SignatureScheme:
    try:
        return _SCHEMES[name](verify_cost)
    except KeyError:
        raise ValueError(f"unknown signature scheme {name!r}; choose from {sorted(_SCHEMES)}") from None


# -- pseudonyms -------------------------------------------------------------

class LifetimeMode(str, enum.Enum):
    OVERLAPPING = "overlapping"
    NON_OVERLAPPING = "non-overlapping"


@dataclass(frozen=True)
class Pseudonym:
    public_key: bytes
    not_before: int
    not_after: int
    issuer_id: str
    signature: bytes = b""
    scheme_id: int = 0

    def __post_init__(self):
        if not self.not_before < self.not_after:
            raise ValueError("pseudonym lifetime must satisfy not_before < not_after")
        if not self.public_key:
            raise ValueError("empty public key")

    def tbs(self) -> bytes:
        """Bytes covered by the issuer signature."""
        return (
            self.public_key
            + struct.pack(">QQ", self.not_before, self.not_after)
            + self.issuer_id.encode()
        )

    def valid_at(self, now: float) -> bool:
        return self.not_before <= now <= self.not_after

    def to_bytes(self) -> bytes:
        issuer = self.issuer_id.encode()
        return b"".join([
            struct.pack(">BH", self.scheme_id, len(self.public_key)),
            self.public_key,
            struct.pack(">QQB", self.not_before, self.not_after, len(issuer)),
            issuer,
            struct.pack(">H", len(self.signature)),
            self.signature,
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Pseudonym":
        try:
            scheme_id, pk_len = struct.unpack_from(">BH", data, 0)
            off = 3
            pk = data[off:off + pk_len]
            off += pk_len
            nb, na, iss_len = struct.unpack_from(">QQB", data, off)
            off += 17
            issuer = data[off:off + iss_len]
            off += iss_len
            (sig_len,) = struct.unpack_from(">H", data, off)
            off += 2
            sig = data[off:off + sig_len]
            off += sig_len
            if len(pk) != pk_len or len(issuer) != iss_len or len(sig) != sig_len or off != len(data):
                raise CorruptPayload("pseudonym length fields do not match payload")
            return cls(pk, nb, na, issuer.decode(), sig, scheme_id)
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise CorruptPayload(f"bad pseudonym encoding: {exc}") from exc


def element_key(p: Pseudonym, mode: LifetimeMode) -> bytes:
    """Canonical filter element for a pseudonym.

    With overlapping lifetimes the public key alone identifies the element;
    with non-overlapping lifetimes the lifetime is appended so one key pair
    under a different slot is a different element.
    """
    if LifetimeMode(mode) is LifetimeMode.OVERLAPPING:
        return p.public_key
    return p.public_key + struct.pack(">QQ", p.not_before, p.not_after)


def verify_pseudonym(p: Pseudonym, scheme: SignatureScheme, issuer_pk: bytes) -> bool:
    return p.scheme_id == scheme.scheme_id and scheme.verify(issuer_pk, p.tbs(), p.signature)


# -- fake pseudonym list ----------------------------------------------------

_FPL_HEADER = struct.Struct(">4sQI")


def key_digest(key: bytes) -> bytes:
    return hashlib.sha256(key).digest()


@dataclass
class FakePseudonymList:
    """Exact set of element-key digests known to pass the filter while being forged."""

    digests: set[bytes] = field(default_factory=set)
    version: int = 0
    signature: bytes = b""

    def contains(self, key: bytes) -> bool:
        return key_digest(key) in self.digests

    __contains__ = contains

    def __len__(self):
        return len(self.digests)

    def add(self, key: bytes) -> bool:
        d = key_digest(key)
        if d in self.digests:
            return False
        self.digests.add(d)
        self.version += 1
        self.signature = b""
        return True

    def merge(self, other: "FakePseudonymList") -> None:
        """Union with a downloaded list; entries are never dropped."""
        self.digests |= other.digests
        self.version = max(self.version, other.version)

    def body(self) -> bytes:
        ordered = sorted(self.digests)
        return _FPL_HEADER.pack(b"PFL1", self.version, len(ordered)) + b"".join(ordered)

    def sign(self, scheme: SignatureScheme, sk: bytes) -> None:
        self.signature = scheme.sign(sk, self.body())

    def verify(self, scheme: SignatureScheme, pk: bytes) -> bool:
        return scheme.verify(pk, self.body(), self.signature)

    def to_bytes(self) -> bytes:
        return self.body() + struct.pack(">H", len(self.signature)) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "FakePseudonymList":
        if len(data) < _FPL_HEADER.size + 2:
            raise CorruptPayload("FPL too short")
        magic, version, count = _FPL_HEADER.unpack_from(data)
        if magic != b"PFL1":
            raise CorruptPayload("bad FPL magic")
        end = _FPL_HEADER.size + 32 * count
        if len(data) < end + 2:
            raise CorruptPayload("truncated FPL")
        digests = [data[i:i + 32] for i in range(_FPL_HEADER.size, end, 32)]
        if digests != sorted(set(digests)):
            raise CorruptPayload("FPL digests not strictly sorted")
        (sig_len,) = struct.unpack_from(">H", data, end)
        sig = data[end + 2:]
        if len(sig) != sig_len:
            raise CorruptPayload("FPL signature length mismatch")
        return cls(set(digests), version, sig)


# -- issuer registry --------------------------------------------------------

@dataclass
class IssuedRecord:
    pseudonym: Pseudonym
    vehicle_id: str
    mode: LifetimeMode
    in_filter: bool = False
    revoked: bool = False


class PcaRegistry:
    """Issuer state: counting filter, issuance records, snapshot chain and FPL.

    Pseudonyms issued with ``insert=False`` are recorded and signed but kept out
    of the counting filter until :meth:`admit` is called; this is how newcomer
    batching holds them back from publication. Single-writer.
    """

    RETAIN = 8

    def __init__(
        self,
        params: FilterParams,
        scheme: SignatureScheme | None = None,
        issuer_id: str = "pca-0",
        coverage_start: int = 0,
        coverage_length: int = DAY,
        counter_bits: int = 4,
        seed: int = 0,
    ):
        self.params = params
        self.scheme = scheme or MockScheme()
        self.issuer_id = issuer_id
        self.coverage_start = coverage_start
        self.coverage_length = coverage_length
        self.cbf = CountingBloomFilter(params, counter_bits)
        self.rng = random.Random(seed)
        self.sk, self.pk = self.scheme.keygen(self.rng)
        self.issued: dict[bytes, IssuedRecord] = {}
        self.fpl = FakePseudonymList()
        self.fpl.sign(self.scheme, self.sk)
        self.version = 0
        self.snapshots: dict[int, BloomFilter] = {}
        self.deltas: dict[tuple[int, int], BfDelta] = {}

    @property
    def coverage(self) -> tuple[int, int]:
        return self.coverage_start, self.coverage_start + self.coverage_length

    def issue_batch(
        self,
        vehicle_id: str,
        count: int,
        mode: LifetimeMode = LifetimeMode.NON_OVERLAPPING,
        window: tuple[int, int] | None = None,
        insert: bool = True,
    ) -> list[Pseudonym]:
        """Generate, sign and record ``count`` pseudonyms for one vehicle.

        Overlapping mode gives every pseudonym the whole window; non-overlapping
        mode cuts it into ``count`` back-to-back slots on whole seconds.
        """
        mode = LifetimeMode(mode)
        start, end = window or self.coverage
        cov_start, cov_end = self.coverage
        if not (cov_start <= start < end <= cov_end):
            raise WindowOutsideCoverage(f"window [{start}, {end}] is outside coverage [{cov_start}, {cov_end}]")
        if count < 1:
            raise ValueError("count must be >= 1")
        if mode is LifetimeMode.NON_OVERLAPPING:
            if end - start < count:
                raise ValueError("window too short for one-second slots")
            bounds = [start + (i * (end - start)) // count for i in range(count + 1)]
            lifetimes = list(zip(bounds[:-1], bounds[1:]))
        else:
            lifetimes = [(start, end)] * count

        out = []
        for nb, na in lifetimes:
            _, pk = self.scheme.keygen(self.rng)
            draft = Pseudonym(pk, nb, na, self.issuer_id, b"", self.scheme.scheme_id)
            p = Pseudonym(pk, nb, na, self.issuer_id, self.scheme.sign(self.sk, draft.tbs()), self.scheme.scheme_id)
            self.issued[element_key(p, mode)] = IssuedRecord(p, vehicle_id, mode)
            out.append(p)
        if insert:
            self.admit([element_key(p, mode) for p in out])
        return out

    def admit(self, keys: Iterable[bytes]) -> None:
        """Insert issued-but-held-back pseudonyms into the counting filter."""
        todo = []
        for key in keys:
            rec = self.issued.get(key)
            if rec is None:
                raise UnknownPseudonym(key.hex())
            if not rec.in_filter and not rec.revoked:
                rec.in_filter = True
                todo.append(key)
        self.cbf.insert_many(todo)

    def revoke(self, key: bytes) -> bool:
        """Remove a pseudonym from the filter; returns False if it was already revoked."""
        rec = self.issued.get(key)
        if rec is None:
            raise UnknownPseudonym(key.hex())
        if rec.revoked:
            return False
        if rec.in_filter:
            self.cbf.delete(key)
            rec.in_filter = False
        rec.revoked = True
        return True

    def revoke_vehicle(self, vehicle_id: str) -> int:
        keys = [k for k, r in self.issued.items() if r.vehicle_id == vehicle_id and not r.revoked]
        live = [k for k in keys if self.issued[k].in_filter]
        self.cbf.delete_many(live)
        for k in keys:
            self.issued[k].in_filter = False
            self.issued[k].revoked = True
        return len(keys)

    def is_issued(self, key: bytes) -> bool:
        return key in self.issued

    def fpl_add(self, key: bytes) -> bool:
        added = self.fpl.add(key)
        if added:
            self.fpl.sign(self.scheme, self.sk)
        return added

    def project(self, version: int | None = None) -> BloomFilter:
        v = self.version if version is None else version
        return self.cbf.project(v, self.coverage_start, self.coverage_length)

    def publish(self) -> tuple[BloomFilter, BfDelta | None]:
        """Cut a new snapshot version and the delta from the previous one."""
        prev = self.snapshots.get(self.version)
        self.version += 1
        snap = self.project()
        self.snapshots[self.version] = snap
        delta = None
        if prev is not None:
            delta = delta_compute(prev, snap)
            self.deltas[(prev.version, snap.version)] = delta
        for v in [v for v in self.snapshots if v <= self.version - self.RETAIN]:
            del self.snapshots[v]
        for pair in [p for p in self.deltas if p[0] not in self.snapshots]:
            del self.deltas[pair]
        if self.cbf.overflow_count:
            log.warning("counting filter has %d saturation events", self.cbf.overflow_count)
        log.debug("published snapshot v%d popcount=%d", snap.version, snap.popcount())
        return snap, delta

    def latest(self) -> BloomFilter | None:
        return self.snapshots.get(self.version)
