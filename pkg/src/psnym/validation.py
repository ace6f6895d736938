"""Receiver-side pseudonym validation.

Order of checks for each received pseudonym:

1. lifetime (cheapest, no hashing)
2. filter membership of the element key
3. on a filter hit: fake-pseudonym-list lookup, then an occasional
   cross-check of the issuer signature
4. on a filter miss: issuer signature check, rationed by a token bucket so a
   flood of junk pseudonyms cannot monopolise the CPU
"""

from __future__ import annotations

import csv
import enum
import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, TextIO

from .credentials import (
    FakePseudonymList,
    LifetimeMode,
    Pseudonym,
    SignatureScheme,
    element_key,
    verify_pseudonym,
)
from .errors import VersionMismatch
from .filters import BfDelta, BloomFilter, delta_apply


class TokenBucket:
    """Token bucket driven by caller-supplied timestamps (simulated or real seconds)."""

    def __init__(self, rate: float, burst: float, now: float = 0.0):
        if rate < 0 or burst < 0:
            raise ValueError("rate and burst must be >= 0")
        self.rate = rate
        self.burst = burst
        self.tokens = float(burst)
        self.last = now

    def _refill(self, now: float) -> None:
        if now > self.last:
            self.tokens = min(self.burst, self.tokens + (now - self.last) * self.rate)
            self.last = now

    def consume(self, now: float, n: float = 1.0) -> bool:
        self._refill(now)
        if self.tokens >= n:
            self.tokens -= n
            return True
        return False

    def set_rate(self, rate: float, now: float) -> None:
        self._refill(now)
        self.rate = max(0.0, rate)


class Outcome(str, enum.Enum):
    ACCEPTED_VIA_FILTER = "AcceptedViaFilter"
    ACCEPTED_VIA_SIGNATURE = "AcceptedViaSignature"
    REJECTED_FPL_HIT = "RejectedFplHit"
    REJECTED_BAD_SIGNATURE = "RejectedBadSignature"
    REJECTED_BUDGET_EXHAUSTED = "RejectedBudgetExhausted"
    REJECTED_EXPIRED = "RejectedExpired"
    DETECTED_FAKE_REPORTED = "DetectedFakeReported"

    @property
    def accepted(self) -> bool:
        return self in (Outcome.ACCEPTED_VIA_FILTER, Outcome.ACCEPTED_VIA_SIGNATURE)


@dataclass(frozen=True)
class ValidationResult:
    outcome: Outcome
    hash_ops: int = 0
    sig_verifies: int = 0
    fallback: bool = False  # True when a filter miss consumed a fallback token


@dataclass
class ValidatorConfig:
    cross_verify_probability: float = 0.01
    fallback_rate: float = 20.0
    fallback_burst: float = 40.0
    seed: int = 0
    mode: LifetimeMode = LifetimeMode.NON_OVERLAPPING
    reactive_threshold: int = 10
    reactive_window: float = 10.0

    def __post_init__(self):
        if not 0 <= self.cross_verify_probability <= 1:
            raise ValueError("cross_verify_probability must be in [0, 1]")
        if self.fallback_rate < 0 or self.fallback_burst < 0:
            raise ValueError("fallback budget must be >= 0")
        if self.reactive_threshold < 1 or self.reactive_window <= 0:
            raise ValueError("reactive threshold and window must be positive")


class VehicleValidator:
    """One vehicle's local view: current snapshot, FPL copy and fallback budget.

    Single-threaded. The snapshot and FPL objects may be shared read-only.
    """

    def __init__(
        self,
        snapshot: BloomFilter,
        fpl: FakePseudonymList | None = None,
        config: ValidatorConfig | None = None,
        scheme: SignatureScheme | None = None,
        issuer_pk: bytes = b"",
        now: float = 0.0,
    ):
        self.snapshot = snapshot
        self.fpl = FakePseudonymList()
        if fpl is not None:
            self.fpl.merge(fpl)
        self.config = config or ValidatorConfig()
        self.scheme = scheme
        self.issuer_pk = issuer_pk
        self.rng = random.Random(self.config.seed)
        self.bucket = TokenBucket(self.config.fallback_rate, self.config.fallback_burst, now)
        self.unknown_arrivals: deque[float] = deque()
        self.reported: list[bytes] = []
        self.fallback_verifies = 0

    @property
    def version(self) -> int:
        return self.snapshot.version

    def validate(self, p: Pseudonym, now: float) -> ValidationResult:
        if self.scheme is None:
            raise RuntimeError("validator has no signature scheme configured")
        return self.validate_key(
            element_key(p, self.config.mode),
            now,
            in_lifetime=p.valid_at(now),
            check_signature=lambda: verify_pseudonym(p, self.scheme, self.issuer_pk),
        )

    def validate_key(
        self,
        key: bytes,
        now: float,
        in_lifetime: bool,
        check_signature: Callable[[], bool],
    ) -> ValidationResult:
        """Run the pipeline on a bare element key; the signature check is lazy."""
        if not in_lifetime:
            return ValidationResult(Outcome.REJECTED_EXPIRED)
        k = self.snapshot.params.k
        if self.snapshot.query(key):
            if key in self.fpl:
                return ValidationResult(Outcome.REJECTED_FPL_HIT, k)
            if self.rng.random() < self.config.cross_verify_probability:
                if check_signature():
                    return ValidationResult(Outcome.ACCEPTED_VIA_FILTER, k, 1)
                self.fpl.add(key)
                self.reported.append(key)
                return ValidationResult(Outcome.DETECTED_FAKE_REPORTED, k, 1)
            return ValidationResult(Outcome.ACCEPTED_VIA_FILTER, k)

        self._note_unknown(now)
        if not self.bucket.consume(now):
            return ValidationResult(Outcome.REJECTED_BUDGET_EXHAUSTED, k)
        self.fallback_verifies += 1
        if check_signature():
            return ValidationResult(Outcome.ACCEPTED_VIA_SIGNATURE, k, 1, fallback=True)
        return ValidationResult(Outcome.REJECTED_BAD_SIGNATURE, k, 1, fallback=True)

    def _note_unknown(self, now: float) -> None:
        self.unknown_arrivals.append(now)
        self._expire(now)

    def _expire(self, now: float) -> None:
        horizon = now - self.config.reactive_window
        q = self.unknown_arrivals
        while q and q[0] <= horizon:
            q.popleft()

    def needs_reactive_update(self, now: float | None = None) -> bool:
        if now is not None:
            self._expire(now)
        return len(self.unknown_arrivals) >= self.config.reactive_threshold

    def apply_update(self, update: BloomFilter | BfDelta) -> None:
        if isinstance(update, BfDelta):
            if update.to_version < update.from_version:
                raise VersionMismatch("delta goes backwards")
            self.snapshot = delta_apply(self.snapshot, update)
        elif isinstance(update, BloomFilter):
            if update.version < self.snapshot.version:
                raise VersionMismatch(f"snapshot v{update.version} is older than local v{self.snapshot.version}")
            self.snapshot = update
        else:
            raise TypeError(f"cannot apply {type(update).__name__}")
        self.unknown_arrivals.clear()

    def update_fpl(self, fpl: FakePseudonymList) -> None:
        self.fpl.merge(fpl)

    def set_fallback_rate(self, rate: float, now: float) -> None:
        self.bucket.set_rate(rate, now)


TRACE_FIELDS = ["arrival_time_s", "element_key_hex", "has_valid_signature", "in_lifetime"]
OUTCOME_FIELDS = ["time", "outcome", "hash_ops", "sig_verifies"]


def replay_trace(validator: VehicleValidator, rows: Iterable[dict]) -> list[dict]:
    """Feed trace rows through the validator; signature validity comes from the trace."""
    out = []
    for row in rows:
        t = float(row["arrival_time_s"])
        sig_ok = row["has_valid_signature"].strip() == "1"
        res = validator.validate_key(
            bytes.fromhex(row["element_key_hex"].strip()),
            t,
            in_lifetime=row["in_lifetime"].strip() == "1",
            check_signature=lambda ok=sig_ok: ok,
        )
        out.append({"time": row["arrival_time_s"].strip(), "outcome": res.outcome.value,
                    "hash_ops": res.hash_ops, "sig_verifies": res.sig_verifies})
    return out


def replay_trace_csv(validator: VehicleValidator, src: TextIO, dst: TextIO) -> int:
    reader = csv.DictReader(src)
    missing = set(TRACE_FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"trace is missing columns: {sorted(missing)}")
    rows = replay_trace(validator, reader)
    writer = csv.DictWriter(dst, OUTCOME_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return len(rows)
