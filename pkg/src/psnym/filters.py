"""Standard and counting Bloom filters plus compressed snapshot deltas.

Every element is hashed once with SHA-256 over ``seed (8 bytes, big-endian) || key``.
The first two 64-bit big-endian words of the digest, ``h1`` and ``h2``, give the
k positions by double hashing: ``(h1 + i * h2) mod m`` for ``i = 0 .. k-1``.

The counting filter lives on the issuer side only. Vehicles receive its
projection, a plain bit vector, either as a full snapshot or as a delta listing
the bit positions that flipped between two snapshot versions.
"""

from __future__ import annotations

import bisect
import hashlib
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptPayload, ParamsMismatch, Underflow, VersionMismatch

SNAPSHOT_MAGIC = b"PBF1"
DELTA_MAGIC = b"PBD1"
COUNTING_MAGIC = b"PCB1"
FORMAT_VERSION = 1

_U64 = 1 << 64
_SNAPSHOT_HEADER = struct.Struct(">4sBQQBQQQ")
_DELTA_HEADER = struct.Struct(">4sBQQQ")
_COUNTING_HEADER = struct.Struct(">4sBQQBQBQ")
_CRC = struct.Struct(">I")

# (h1 mod m) + 63 * (h2 mod m) must stay below 2**64 in the vectorised path.
_BATCH_MAX_M = 1 << 56


@dataclass(frozen=True)
class FilterParams:
    m: int
    k: int
    n_target: int = field(default=1, compare=False)
    seed: int = 0

    def __post_init__(self):
        if self.m < 8 or self.m % 8:
            raise ValueError(f"m must be a positive multiple of 8, got {self.m}")
        if not 1 <= self.k <= 64:
            raise ValueError(f"k must be in [1, 64], got {self.k}")
        if self.n_target < 1:
            raise ValueError(f"n_target must be >= 1, got {self.n_target}")
        if not 0 <= self.seed < _U64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @classmethod
    def for_capacity(
        cls, n_target: int, bits_per_element: float, seed: int = 0, k: int | None = None
    ) -> "FilterParams":
        """Size a filter for ``n_target`` elements at ``bits_per_element`` bits each.

        m is rounded up to a whole byte. Without an explicit k the optimum
        ``round((m / n) ln 2)`` is used, clamped to [1, 64].
        """
        m = max(8, math.ceil(n_target * bits_per_element / 8) * 8)
        if k is None:
            k = optimal_k(m, n_target)
        return cls(m=m, k=k, n_target=n_target, seed=seed)

    @property
    def nbytes(self) -> int:
        return self.m // 8


def optimal_k(m: int, n: int) -> int:
    return min(64, max(1, round(m / n * math.log(2))))


def _digest(key: bytes, seed: int) -> bytes:
    return hashlib.sha256(seed.to_bytes(8, "big") + key).digest()


def hash_positions(key: bytes, params: FilterParams) -> list[int]:
    """Return the k bit indices for ``key`` (duplicates are possible)."""
    d = _digest(key, params.seed)
    h1 = int.from_bytes(d[:8], "big")
    h2 = int.from_bytes(d[8:16], "big")
    return [(h1 + i * h2) % params.m for i in range(params.k)]


def hash_positions_batch(keys: Sequence[bytes], params: FilterParams) -> np.ndarray:
    """Vectorised :func:`hash_positions`; returns a ``(len(keys), k)`` int64 array."""
    if not keys:
        return np.empty((0, params.k), dtype=np.int64)
    if params.m >= _BATCH_MAX_M:
        return np.array([hash_positions(key, params) for key in keys], dtype=np.int64)
    prefix = params.seed.to_bytes(8, "big")
    sha = hashlib.sha256
    raw = b"".join([sha(prefix + key).digest() for key in keys])
    words = np.frombuffer(raw, dtype=">u8").reshape(-1, 4)
    m = np.uint64(params.m)
    h1 = words[:, 0].astype(np.uint64) % m
    h2 = words[:, 1].astype(np.uint64) % m
    steps = np.arange(params.k, dtype=np.uint64)
    return ((h1[:, None] + steps[None, :] * h2[:, None]) % m).astype(np.int64)


def _distinct_rows(pos: np.ndarray) -> np.ndarray:
    """Flatten positions, dropping repeats within a row (one increment per key)."""
    if pos.size == 0:
        return pos.reshape(-1)
    srt = np.sort(pos, axis=1)
    keep = np.ones_like(srt, dtype=bool)
    keep[:, 1:] = srt[:, 1:] != srt[:, :-1]
    return srt[keep]


class BloomFilter:
    """Immutable published snapshot: an m-bit vector plus version and coverage window."""

    __slots__ = ("params", "bits", "version", "coverage_start", "coverage_length")

    def __init__(
        self,
        params: FilterParams,
        bits: np.ndarray | None = None,
        version: int = 0,
        coverage_start: int = 0,
        coverage_length: int = 0,
    ):
        if bits is None:
            bits = np.zeros(params.m, dtype=bool)
        bits = np.asarray(bits, dtype=bool)
        if bits.shape != (params.m,):
            raise ValueError(f"bit vector has length {bits.size}, expected {params.m}")
        if version < 0:
            raise ValueError("version must be >= 0")
        bits = bits.copy()
        bits.flags.writeable = False
        self.params = params
        self.bits = bits
        self.version = version
        self.coverage_start = coverage_start
        self.coverage_length = coverage_length

    @classmethod
    def from_keys(cls, params: FilterParams, keys: Sequence[bytes], **kw) -> "BloomFilter":
        bits = np.zeros(params.m, dtype=bool)
        bits[hash_positions_batch(list(keys), params).reshape(-1)] = True
        return cls(params, bits, **kw)

    def query(self, key: bytes) -> bool:
        bits = self.bits
        return all(bits[i] for i in hash_positions(key, self.params))

    def query_many(self, keys: Sequence[bytes]) -> np.ndarray:
        pos = hash_positions_batch(list(keys), self.params)
        return self.bits[pos].all(axis=1)

    __contains__ = query

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def fill_ratio(self) -> float:
        return self.popcount() / self.params.m

    def estimated_fp_rate(self) -> float:
        """Probability a random non-member passes, taking the fill ratio as exact."""
        return self.fill_ratio() ** self.params.k

    @property
    def coverage(self) -> tuple[int, int]:
        return self.coverage_start, self.coverage_start + self.coverage_length

    def replace(self, bits: np.ndarray | None = None, version: int | None = None) -> "BloomFilter":
        return BloomFilter(
            self.params,
            self.bits if bits is None else bits,
            self.version if version is None else version,
            self.coverage_start,
            self.coverage_length,
        )

    def __eq__(self, other):
        if not isinstance(other, BloomFilter):
            return NotImplemented
        return (
            self.params == other.params
            and self.version == other.version
            and self.coverage == other.coverage
            and np.array_equal(self.bits, other.bits)
        )

    def __repr__(self):
        return (
            f"BloomFilter(m={self.params.m}, k={self.params.k}, version={self.version}, "
            f"popcount={self.popcount()})"
        )

    def to_bytes(self) -> bytes:
        p = self.params
        head = _SNAPSHOT_HEADER.pack(
            SNAPSHOT_MAGIC, FORMAT_VERSION, p.seed, p.m, p.k,
            self.version, self.coverage_start, self.coverage_length,
        )
        body = head + np.packbits(self.bits).tobytes()
        return body + _CRC.pack(zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        body = _check_crc(data, _SNAPSHOT_HEADER.size)
        magic, fmt, seed, m, k, version, cov_start, cov_len = _SNAPSHOT_HEADER.unpack_from(body)
        if magic != SNAPSHOT_MAGIC or fmt != FORMAT_VERSION:
            raise CorruptPayload("not a snapshot (bad magic or format version)")
        if m % 8 or len(body) != _SNAPSHOT_HEADER.size + m // 8:
            raise CorruptPayload("snapshot length does not match m")
        try:
            # n_target is not carried on the wire; recover the n for which k is optimal
            params = FilterParams(m=m, k=k, n_target=max(1, round(m * math.log(2) / k)), seed=seed)
        except ValueError as exc:
            raise CorruptPayload(str(exc)) from exc
        raw = np.frombuffer(body, dtype=np.uint8, offset=_SNAPSHOT_HEADER.size)
        return cls(params, np.unpackbits(raw).astype(bool), version, cov_start, cov_len)


class CountingBloomFilter:
    """Issuer-side mutable registry with saturating per-position counters.

    A counter that reaches ``2**counter_bits - 1`` is pinned there forever: it is
    never decremented, so deletions can leave stale bits but never cause false
    negatives. Each attempted increment past the maximum bumps ``overflow_count``.
    Not thread-safe; use a single writer and hand out projections to readers.
    """

    def __init__(self, params: FilterParams, counter_bits: int = 4):
        if not 1 <= counter_bits <= 8:
            raise ValueError("counter_bits must be in [1, 8]")
        self.params = params
        self.counter_bits = counter_bits
        self.counters = np.zeros(params.m, dtype=np.uint8)
        self.overflow_count = 0

    @property
    def max_count(self) -> int:
        return (1 << self.counter_bits) - 1

    def insert(self, key: bytes) -> None:
        self._add(np.unique(hash_positions(key, self.params)))

    def insert_many(self, keys: Iterable[bytes]) -> None:
        """Same result as inserting each key in turn."""
        self._add(_distinct_rows(hash_positions_batch(list(keys), self.params)))

    def delete(self, key: bytes) -> None:
        self._remove(np.unique(hash_positions(key, self.params)))

    def delete_many(self, keys: Iterable[bytes]) -> None:
        """Same result as deleting each key in turn; all-or-nothing on Underflow."""
        self._remove(_distinct_rows(hash_positions_batch(list(keys), self.params)))

    def _add(self, flat: np.ndarray) -> None:
        idx, cnt = np.unique(flat, return_counts=True)
        total = self.counters[idx].astype(np.int64) + cnt
        excess = total - self.max_count
        self.overflow_count += int(excess[excess > 0].sum())
        self.counters[idx] = np.minimum(total, self.max_count)

    def _remove(self, flat: np.ndarray) -> None:
        idx, cnt = np.unique(flat, return_counts=True)
        cur = self.counters[idx].astype(np.int64)
        live = cur < self.max_count
        after = cur - cnt
        if np.any(live & (after < 0)):
            bad = idx[live & (after < 0)]
            raise Underflow(f"counter underflow at {len(bad)} position(s), first {int(bad[0])}")
        self.counters[idx[live]] = after[live]

    def count_at(self, key: bytes) -> list[int]:
        return [int(self.counters[i]) for i in hash_positions(key, self.params)]

    def popcount(self) -> int:
        return int(np.count_nonzero(self.counters))

    def project(self, version: int = 0, coverage_start: int = 0, coverage_length: int = 0) -> BloomFilter:
        return BloomFilter(self.params, self.counters > 0, version, coverage_start, coverage_length)

    def copy(self) -> "CountingBloomFilter":
        out = CountingBloomFilter(self.params, self.counter_bits)
        out.counters = self.counters.copy()
        out.overflow_count = self.overflow_count
        return out

    def __eq__(self, other):
        if not isinstance(other, CountingBloomFilter):
            return NotImplemented
        return (
            self.params == other.params
            and self.params.n_target == other.params.n_target
            and self.counter_bits == other.counter_bits
            and self.overflow_count == other.overflow_count
            and np.array_equal(self.counters, other.counters)
        )

    def to_bytes(self) -> bytes:
        p = self.params
        head = _COUNTING_HEADER.pack(
            COUNTING_MAGIC, FORMAT_VERSION, p.seed, p.m, p.k,
            p.n_target, self.counter_bits, self.overflow_count,
        )
        width = self.counter_bits
        planes = np.unpackbits(self.counters[:, None], axis=1)[:, 8 - width:]
        body = head + np.packbits(planes.reshape(-1)).tobytes()
        return body + _CRC.pack(zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "CountingBloomFilter":
        body = _check_crc(data, _COUNTING_HEADER.size)
        magic, fmt, seed, m, k, n_target, width, overflow = _COUNTING_HEADER.unpack_from(body)
        if magic != COUNTING_MAGIC or fmt != FORMAT_VERSION:
            raise CorruptPayload("not a counting filter (bad magic or format version)")
        try:
            out = cls(FilterParams(m=m, k=k, n_target=n_target, seed=seed), width)
        except ValueError as exc:
            raise CorruptPayload(str(exc)) from exc
        nbits = m * width
        raw = np.frombuffer(body, dtype=np.uint8, offset=_COUNTING_HEADER.size)
        if raw.size != (nbits + 7) // 8:
            raise CorruptPayload("counter payload length does not match m")
        planes = np.unpackbits(raw)[:nbits].reshape(m, width)
        padded = np.zeros((m, 8), dtype=np.uint8)
        padded[:, 8 - width:] = planes
        out.counters = np.packbits(padded, axis=1).reshape(-1)
        out.overflow_count = overflow
        return out


@dataclass(eq=False)
class BfDelta:
    """Bit positions that differ between snapshot ``from_version`` and ``to_version``."""

    from_version: int
    to_version: int
    flipped_positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.flipped_positions, dtype=np.int64)
        if pos.size and (pos[0] < 0 or np.any(np.diff(pos) <= 0)):
            raise ValueError("flipped positions must be strictly increasing and non-negative")
        self.flipped_positions = pos

    @property
    def flip_count(self) -> int:
        return int(self.flipped_positions.size)

    def __eq__(self, other):
        if not isinstance(other, BfDelta):
            return NotImplemented
        return (
            self.from_version == other.from_version
            and self.to_version == other.to_version
            and np.array_equal(self.flipped_positions, other.flipped_positions)
        )

    def to_bytes(self) -> bytes:
        out = bytearray(
            _DELTA_HEADER.pack(DELTA_MAGIC, FORMAT_VERSION, self.from_version, self.to_version, self.flip_count)
        )
        prev = -1
        for pos in self.flipped_positions.tolist():
            gap = pos - prev
            prev = pos
            while gap >= 0x80:
                out.append((gap & 0x7F) | 0x80)
                gap >>= 7
            out.append(gap)
        out += _CRC.pack(zlib.crc32(out))
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BfDelta":
        body = _check_crc(data, _DELTA_HEADER.size)
        magic, fmt, from_v, to_v, count = _DELTA_HEADER.unpack_from(body)
        if magic != DELTA_MAGIC or fmt != FORMAT_VERSION:
            raise CorruptPayload("not a delta (bad magic or format version)")
        positions = []
        prev = -1
        i = _DELTA_HEADER.size
        end = len(body)
        for _ in range(count):
            gap = shift = 0
            while True:
                if i >= end:
                    raise CorruptPayload("truncated varint stream")
                byte = body[i]
                i += 1
                gap |= (byte & 0x7F) << shift
                shift += 7
                if not byte & 0x80:
                    break
            if gap == 0:
                raise CorruptPayload("zero gap in delta")
            prev += gap
            positions.append(prev)
        if i != end:
            raise CorruptPayload("trailing bytes after delta positions")
        return cls(from_v, to_v, np.array(positions, dtype=np.int64))


def delta_compute(old: BloomFilter, new: BloomFilter) -> BfDelta:
    if old.params != new.params:
        raise ParamsMismatch("snapshots were built with different filter parameters")
    if old.version >= new.version and not (old.version == new.version and np.array_equal(old.bits, new.bits)):
        raise VersionMismatch(f"delta must go forward: {old.version} -> {new.version}")
    return BfDelta(old.version, new.version, np.flatnonzero(old.bits != new.bits))


def delta_apply(old: BloomFilter, delta: BfDelta) -> BloomFilter:
    if old.version != delta.from_version:
        raise VersionMismatch(f"delta starts at version {delta.from_version}, snapshot is {old.version}")
    pos = delta.flipped_positions
    if pos.size and pos[-1] >= old.params.m:
        raise ParamsMismatch(f"delta position {int(pos[-1])} is outside m={old.params.m}")
    bits = old.bits.copy()
    bits[pos] ^= True
    return old.replace(bits=bits, version=delta.to_version)


def _check_crc(data: bytes, header_size: int) -> bytes:
    if len(data) < header_size + _CRC.size:
        raise CorruptPayload("payload shorter than its header")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(body) != crc:
        raise CorruptPayload("CRC-32 mismatch")
    return body


class HashList:
    """Sorted list of element digests; the exact-membership alternative to a filter.

    Kept for size and lookup-cost comparisons. ``contains`` uses binary search;
    ``contains_linear`` is the naive scan.
    """

    DIGEST_SIZE = 32

    def __init__(self, keys: Iterable[bytes] = ()):
        self._digests = sorted({hashlib.sha256(k).digest() for k in keys})

    def __len__(self):
        return len(self._digests)

    def contains(self, key: bytes) -> bool:
        d = hashlib.sha256(key).digest()
        i = bisect.bisect_left(self._digests, d)
        return i < len(self._digests) and self._digests[i] == d

    def contains_linear(self, key: bytes) -> bool:
        d = hashlib.sha256(key).digest()
        return any(x == d for x in self._digests)

    def size_bits(self) -> int:
        return 8 * self.DIGEST_SIZE * len(self._digests)
