"""Discrete-event simulation of one receiver's verification queue, plus attack
and privacy experiments built on the real filter, registry and validator code.

All randomness comes from ``random.Random`` instances seeded from the config,
so a run is a pure function of its :class:`SimConfig`.
"""

from __future__ import annotations

import dataclasses
import enum
import heapq
import logging
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .analytics import QueueModelParams, Scheme, avg_system_time, delta_flip_probability, binary_entropy
from .credentials import DAY, LifetimeMode, PcaRegistry, element_key
from .errors import BadSpec, DomainError, Unstable
from .filters import BloomFilter, FilterParams, delta_apply, delta_compute, hash_positions_batch
from .service import PublicationState
from .validation import Outcome, ValidatorConfig, VehicleValidator

log = logging.getLogger(__name__)

# stream tags mixed into the seed so benign and attack traffic never share draws
_BENIGN, _ATTACK, _FILTER = 0x0B, 0xA7, 0xF1


def _stream(seed: int, tag: int) -> random.Random:
    return random.Random(f"{seed}:{tag}")


@dataclass
class SimConfig:
    # queue
    N: int = 50
    c: float = 0.6
    gamma: float = 3.0
    tau: float = 0.004
    scheme: Scheme = Scheme.BF_BASED
    duration: float = 600.0
    seed: int = 0
    hash_cost: float = 2e-6
    warmup_fraction: float = 0.1
    max_queue: int = 0  # 0 means unbounded
    allow_unstable: bool = True
    # clogging attacker and receiver budget
    attack_rate: float = 0.0
    fallback_rate: float = 20.0
    fallback_burst: float = 40.0
    unlimited_budget: bool = False
    adaptive_budget: bool = True
    adapt_interval: float = 1.0
    adapt_spike: int = 10
    fallback_rate_floor: float = 1.0
    cross_verify_probability: float = 0.0
    # brute force
    bruteforce_runs: int = 200
    bruteforce_keypairs: int = 2000
    max_fake_uses: int = 1000
    lifetime_mode: LifetimeMode = LifetimeMode.OVERLAPPING
    slots: int = 144
    # desk-scale filter
    filter_n: int = 10_000
    bits_per_element: float = 16.0
    k: int = 11
    # privacy
    v_min: int = 1000
    base_vehicles: int = 100
    newcomers: int = 3
    newcomer_rate: float = 1.0
    pseudonyms_per_newcomer: int = 2

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.lifetime_mode = LifetimeMode(self.lifetime_mode)
        if self.duration < 0:
            raise DomainError("duration must be >= 0")
        for name in ("c", "gamma", "tau", "hash_cost", "attack_rate", "fallback_rate",
                     "fallback_burst", "newcomer_rate", "fallback_rate_floor"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.N < 1 or self.gamma <= 0 or self.tau <= 0:
            raise DomainError("N, gamma and tau must be positive")
        if self.c > self.gamma:
            raise DomainError("c cannot exceed gamma")
        if not 0 <= self.warmup_fraction < 1:
            raise DomainError("warmup_fraction must be in [0, 1)")
        if not 0 <= self.cross_verify_probability <= 1:
            raise DomainError("cross_verify_probability must be in [0, 1]")
        if self.adapt_interval <= 0:
            raise DomainError("adapt_interval must be positive")

    @classmethod
    def for_arrivals(cls, arrivals: int, **kw) -> "SimConfig":
        """Config whose post-warm-up window holds ``arrivals`` benign arrivals on average."""
        cfg = cls(**kw)
        return dataclasses.replace(cfg, duration=arrivals / (cfg.gamma * cfg.N) / (1 - cfg.warmup_fraction))

    def queue_params(self, scheme: Scheme | None = None) -> QueueModelParams:
        return QueueModelParams(self.N, self.c, self.gamma, self.tau, scheme or self.scheme, self.hash_cost)

    def filter_params(self) -> FilterParams:
        return FilterParams.for_capacity(self.filter_n, self.bits_per_element, seed=self.seed, k=self.k)

    def validator_config(self) -> ValidatorConfig:
        rate = math.inf if self.unlimited_budget else self.fallback_rate
        burst = math.inf if self.unlimited_budget else self.fallback_burst
        return ValidatorConfig(self.cross_verify_probability, rate, burst, self.seed, self.lifetime_mode)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, default, raw: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        if isinstance(default, enum.Enum):
            return type(default)(raw)
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise BadSpec(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str) -> dict[str, object]:
    """Parse flat ``key = value`` lines (``#`` starts a comment) into typed SimConfig fields.

    ``tau_ms`` and ``hash_cost_us`` are accepted as unit-scaled aliases.
    """
    defaults = {f.name: f.default for f in dataclasses.fields(SimConfig)}
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise BadSpec(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split(sep, 1))
        key = key.replace("-", "_")
        if key == "tau_ms":
            out["tau"] = _coerce(key, 0.0, value) / 1e3
        elif key == "hash_cost_us":
            out["hash_cost"] = _coerce(key, 0.0, value) / 1e6
        elif key in defaults:
            out[key] = _coerce(key, defaults[key], value)
        else:
            raise BadSpec(f"line {lineno}: unknown key {key!r}")
    return out


def config_from(mapping: Mapping[str, object] | None = None, **overrides) -> SimConfig:
    merged = {**(mapping or {}), **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return SimConfig(**merged)
    except TypeError as exc:
        raise BadSpec(str(exc)) from exc


@dataclass
class SimReport:
    experiment: str
    arrivals: int = 0
    served: int = 0
    queued_at_end: int = 0
    rejected: int = 0
    measured: int = 0
    mean_system_time: float = 0.0
    class_counts: dict[str, int] = field(default_factory=dict)
    outcomes: dict[str, int] = field(default_factory=dict)
    cpu_hash_time: float = 0.0
    cpu_signature_time: float = 0.0
    metrics: dict[str, float] = field(default_factory=dict)
    trials: list[int] = field(default_factory=list)
    anonymity_sets: dict[int, list[int]] = field(default_factory=dict)

    @property
    def conserved(self) -> bool:
        return self.arrivals == self.served + self.queued_at_end + self.rejected == sum(self.outcomes.values())

    def summary_rows(self) -> list[tuple[str, float]]:
        rows: list[tuple[str, float]] = [
            ("arrivals", self.arrivals),
            ("served", self.served),
            ("queued_at_end", self.queued_at_end),
            ("rejected", self.rejected),
            ("measured", self.measured),
            ("mean_system_time_s", self.mean_system_time),
            ("cpu_hash_time_s", self.cpu_hash_time),
            ("cpu_signature_time_s", self.cpu_signature_time),
        ]
        rows += [(f"class_{k}", v) for k, v in sorted(self.class_counts.items())]
        rows += [(f"outcome_{k}", v) for k, v in sorted(self.outcomes.items())]
        rows += sorted(self.metrics.items())
        for v_min, sizes in sorted(self.anonymity_sets.items()):
            rows += [
                (f"vmin_{v_min}_deltas", len(sizes)),
                (f"vmin_{v_min}_anonymity_min", min(sizes, default=0)),
                (f"vmin_{v_min}_anonymity_mean", sum(sizes) / len(sizes) if sizes else 0.0),
            ]
        return rows


# -- event engine ---------------------------------------------------------

class EventKind(enum.IntEnum):
    BEACON = 0
    ATTACK = 1
    SERVICE_DONE = 2
    ADAPT = 3


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: object = field(default=None, compare=False)


class EventQueue:
    """Time-ordered heap; equal timestamps pop in insertion order."""

    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = 0

    def push(self, time: float, kind: EventKind, payload=None) -> None:
        heapq.heappush(self._heap, SimEvent(time, self._seq, kind, payload))
        self._seq += 1

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def __len__(self):
        return len(self._heap)


@dataclass
class _Job:
    arrival: float
    service: float
    benign: bool
    hash_time: float
    sig_time: float


def _build_desk_filter(cfg: SimConfig) -> tuple[BloomFilter, list[bytes]]:
    rng = _stream(cfg.seed, _FILTER)
    keys = [rng.randbytes(16) for _ in range(cfg.filter_n)]
    return BloomFilter.from_keys(cfg.filter_params(), keys, version=1, coverage_length=DAY), keys


def _simulate(cfg: SimConfig, attack_rate: float, validator: VehicleValidator | None) -> SimReport:
    report = SimReport("queue")
    if cfg.duration <= 0:
        return report
    scheme = cfg.scheme
    s1 = 2 * cfg.tau if scheme is Scheme.BASELINE else cfg.tau + cfg.hash_cost
    h1 = 0.0 if scheme is Scheme.BASELINE else cfg.hash_cost
    lam = cfg.gamma * cfg.N
    p1 = cfg.c / cfg.gamma
    label1 = (Outcome.ACCEPTED_VIA_SIGNATURE if scheme is Scheme.BASELINE else Outcome.ACCEPTED_VIA_FILTER).value
    benign_rng = _stream(cfg.seed, _BENIGN)
    attack_rng = _stream(cfg.seed, _ATTACK)
    warmup = cfg.warmup_fraction * cfg.duration

    events = EventQueue()
    queue: deque[_Job] = deque()
    busy = False
    outcomes: Counter[str] = Counter()
    classes: Counter[str] = Counter()
    total_time = 0.0
    attack_sig_ops = 0
    exhausted_window = 0  # budget rejections since last controller tick
    fb_rate = cfg.fallback_rate

    events.push(benign_rng.expovariate(lam), EventKind.BEACON)
    if attack_rate > 0:
        events.push(attack_rng.expovariate(attack_rate), EventKind.ATTACK)
        if validator is not None and cfg.adaptive_budget and not cfg.unlimited_budget:
            events.push(cfg.adapt_interval, EventKind.ADAPT)

    def enqueue(job: _Job, now: float) -> None:
        nonlocal busy
        if cfg.max_queue and len(queue) >= cfg.max_queue:
            report.rejected += 1
            return
        queue.append(job)
        if not busy:
            busy = True
            events.push(now + job.service, EventKind.SERVICE_DONE)

    while events:
        ev = events.pop()
        now = ev.time
        if now > cfg.duration:
            break
        kind = ev.kind
        if kind is EventKind.BEACON:
            report.arrivals += 1
            if benign_rng.random() < p1:
                classes["1"] += 1
                outcomes[label1] += 1
                enqueue(_Job(now, s1, True, h1, s1 - h1), now)
            else:
                classes["2"] += 1
                outcomes["KnownPseudonym"] += 1
                enqueue(_Job(now, cfg.tau, True, 0.0, cfg.tau), now)
            events.push(now + benign_rng.expovariate(lam), EventKind.BEACON)
        elif kind is EventKind.ATTACK:
            report.arrivals += 1
            classes["attack"] += 1
            key = attack_rng.randbytes(49)
            if validator is None:
                # baseline receiver: every fake costs one signature verification
                outcomes[Outcome.REJECTED_BAD_SIGNATURE.value] += 1
                sig_ops = 1
                hash_t = 0.0
            else:
                res = validator.validate_key(key, now, True, lambda: False)
                outcomes[res.outcome.value] += 1
                # a fake accepted via the filter still needs its message signature checked
                sig_ops = res.sig_verifies + (1 if res.outcome.accepted else 0)
                hash_t = cfg.hash_cost
                if res.outcome is Outcome.REJECTED_BUDGET_EXHAUSTED:
                    exhausted_window += 1
            attack_sig_ops += sig_ops
            enqueue(_Job(now, hash_t + sig_ops * cfg.tau, False, hash_t, sig_ops * cfg.tau), now)
            events.push(now + attack_rng.expovariate(attack_rate), EventKind.ATTACK)
        elif kind is EventKind.SERVICE_DONE:
            job = queue.popleft()
            report.served += 1
            report.cpu_hash_time += job.hash_time
            report.cpu_signature_time += job.sig_time
            if job.benign and job.arrival >= warmup:
                total_time += now - job.arrival
                report.measured += 1
            if queue:
                events.push(now + queue[0].service, EventKind.SERVICE_DONE)
            else:
                busy = False
        elif kind is EventKind.ADAPT:
            if exhausted_window >= cfg.adapt_spike:
                fb_rate = max(cfg.fallback_rate_floor, fb_rate / 2)
            elif exhausted_window == 0:
                fb_rate = min(cfg.fallback_rate, fb_rate * 2)
            validator.set_fallback_rate(fb_rate, now)
            exhausted_window = 0
            events.push(now + cfg.adapt_interval, EventKind.ADAPT)

    report.queued_at_end = len(queue)
    report.class_counts = dict(sorted(classes.items()))
    report.outcomes = dict(sorted(outcomes.items()))
    report.mean_system_time = total_time / report.measured if report.measured else 0.0
    if attack_rate > 0:
        report.metrics["attack_sig_verifications"] = attack_sig_ops
        if validator is not None:
            report.metrics["attack_fallback_verifications"] = validator.fallback_verifies
            report.metrics["final_fallback_rate"] = validator.bucket.rate
    return report


def _check_stability(cfg: SimConfig, extra_load: float = 0.0) -> float:
    rho = cfg.queue_params().utilization + extra_load
    if rho >= 1:
        if not cfg.allow_unstable:
            raise Unstable(rho)
        log.warning("UnstableConfig: rho=%.4f >= 1, the queue will grow without bound", rho)
    return rho


def run_queue_sim(cfg: SimConfig) -> SimReport:
    """Two-class single-server FIFO queue with Poisson arrivals and deterministic service."""
    rho = _check_stability(cfg)
    report = _simulate(cfg, 0.0, None)
    report.metrics["rho_analytic"] = rho
    try:
        report.metrics["T_analytic_s"] = avg_system_time(cfg.queue_params()).system_time
    except Unstable:
        pass
    return report


# -- attacks ----------------------------------------------------------------

def run_clogging_attack(cfg: SimConfig) -> SimReport:
    """Flood of random pseudonyms with junk signatures against a budgeted validator.

    The benign arrival stream is drawn from its own generator, so the attack
    run and the reference run see the same benign traffic.
    """
    if cfg.attack_rate < 0:
        raise DomainError("attack_rate must be >= 0")
    reference = _simulate(cfg, 0.0, None)
    if cfg.attack_rate == 0:
        reference.experiment = "clogging"
        return reference
    snapshot, _ = _build_desk_filter(cfg)
    validator = VehicleValidator(snapshot, config=cfg.validator_config())
    report = _simulate(cfg, cfg.attack_rate, validator)
    report.experiment = "clogging"
    m = report.metrics
    m["benign_T_no_attack_s"] = reference.mean_system_time
    m["benign_T_attack_s"] = report.mean_system_time
    if reference.mean_system_time:
        m["benign_T_degradation"] = report.mean_system_time / reference.mean_system_time - 1
    if not cfg.unlimited_budget:
        m["fallback_bound"] = cfg.fallback_rate * cfg.duration + cfg.fallback_burst
    # receiver that verifies every fake: hash plus one signature per attack message
    m["rho_unlimited"] = cfg.queue_params().utilization + cfg.attack_rate * (cfg.hash_cost + cfg.tau)
    m["unlimited_unstable"] = float(m["rho_unlimited"] >= 1)
    return report


def _geometric_trials(snapshot: BloomFilter, keys_for, rng: random.Random, batch: int = 4096) -> tuple[int, bytes]:
    """Draw candidates until one passes; ``keys_for`` maps a candidate seed to its element keys."""
    tried = 0
    while True:
        cands = [rng.randbytes(33) for _ in range(batch)]
        hits = snapshot.query_many([k for c in cands for k in keys_for(c)])
        per = hits.reshape(batch, -1).any(axis=1)
        idx = np.flatnonzero(per)
        if idx.size:
            return tried + int(idx[0]) + 1, cands[int(idx[0])]
        tried += batch


def _slot_keys(slots: int, length: int = DAY):
    bounds = [(i * length) // slots for i in range(slots + 1)]
    suffixes = [a.to_bytes(8, "big") + b.to_bytes(8, "big") for a, b in zip(bounds[:-1], bounds[1:])]
    return lambda pk: [pk + s for s in suffixes]


def run_bruteforce_attack(cfg: SimConfig) -> SimReport:
    """Search for random keys that pass the published filter.

    Reports trials to the first false positive over ``bruteforce_runs`` runs,
    the per-keypair pass rate when each key pair may be tried in every lifetime
    slot, and how many times a found fake is accepted before it is caught.
    """
    snapshot, _ = _build_desk_filter(cfg)
    fp = snapshot.estimated_fp_rate()
    if fp < 1e-6:
        raise DomainError(f"filter false-positive rate {fp:.3g} is too small for a desk-scale attack")
    rng = _stream(cfg.seed, _ATTACK)
    report = SimReport("bruteforce")
    found = []
    for _ in range(cfg.bruteforce_runs):
        n, key = _geometric_trials(snapshot, lambda c: [c], rng)
        report.trials.append(n)
        found.append(key)

    accepted_before = []
    outcomes: Counter[str] = Counter()
    vcfg = dataclasses.replace(cfg.validator_config(), mode=LifetimeMode.OVERLAPPING)
    for i, key in enumerate(found):
        v = VehicleValidator(snapshot, config=dataclasses.replace(vcfg, seed=cfg.seed + i))
        uses = 0
        for t in range(cfg.max_fake_uses):
            res = v.validate_key(key, float(t), True, lambda: False)
            outcomes[res.outcome.value] += 1
            if res.outcome is Outcome.REJECTED_FPL_HIT:
                break
            uses += res.outcome is Outcome.ACCEPTED_VIA_FILTER
        accepted_before.append(uses)
    report.outcomes = dict(sorted(outcomes.items()))

    m = report.metrics
    m["fp_estimate"] = fp
    m["expected_trials"] = 1 / fp
    m["mean_trials"] = sum(report.trials) / len(report.trials) if report.trials else 0.0
    m["mean_fakes_accepted_before_detection"] = (
        sum(accepted_before) / len(accepted_before) if accepted_before else 0.0
    )

    if cfg.bruteforce_keypairs:
        keys_for = _slot_keys(cfg.slots)
        pairs = [rng.randbytes(33) for _ in range(cfg.bruteforce_keypairs)]
        passed = 0
        for start in range(0, len(pairs), 256):
            chunk = pairs[start:start + 256]
            hits = snapshot.query_many([k for pk in chunk for k in keys_for(pk)])
            passed += int(hits.reshape(len(chunk), -1).any(axis=1).sum())
        p_slot = 1 - (1 - fp) ** cfg.slots
        m["keypair_pass_rate"] = passed / len(pairs)
        m["keypair_pass_expected"] = p_slot
        m["keypair_pass_union_bound"] = cfg.slots * fp
        m["keypair_pass_sigma"] = math.sqrt(p_slot * (1 - p_slot) / len(pairs))
    return report


# -- filter measurements ----------------------------------------------------

@dataclass(frozen=True)
class FpMeasurement:
    hits: int
    probes: int
    fill_ratio: float
    k: int

    @property
    def observed(self) -> float:
        return self.hits / self.probes

    @property
    def reference(self) -> float:
        return 0.5 ** self.k

    @property
    def sigma(self) -> float:
        p = self.reference
        return math.sqrt(p * (1 - p) / self.probes)

    @property
    def z(self) -> float:
        return (self.observed - self.reference) / self.sigma


def measure_fp_rate(n: int = 10_000, bits_per_element: float = 16, k: int | None = 11,
                    probes: int = 1_000_000, seed: int = 0, chunk: int = 100_000) -> FpMeasurement:
    """Probe a filter of ``n`` random 16-byte keys with random 20-byte non-members."""
    rng = _stream(seed, _FILTER)
    params = FilterParams.for_capacity(n, bits_per_element, seed=seed, k=k)
    bf = BloomFilter.from_keys(params, [rng.randbytes(16) for _ in range(n)])
    hits = 0
    done = 0
    while done < probes:
        size = min(chunk, probes - done)
        raw = rng.randbytes(20 * size)
        hits += int(bf.query_many([raw[i:i + 20] for i in range(0, len(raw), 20)]).sum())
        done += size
    return FpMeasurement(hits, probes, bf.fill_ratio(), params.k)


def delta_size_experiment(n: int = 100_000, bits_per_element: float = 96,
                          fractions: Iterable[float] = (0.001, 0.01, 0.1), seed: int = 0) -> list[dict]:
    """Grow a filter by ``f * n`` keys and compare the encoded delta with its entropy bound."""
    rng = _stream(seed, _FILTER)
    params = FilterParams.for_capacity(n, bits_per_element, seed=seed)
    base_bits = np.zeros(params.m, dtype=bool)
    base_bits[hash_positions_batch([rng.randbytes(16) for _ in range(n)], params).reshape(-1)] = True
    old = BloomFilter(params, base_bits, version=1)
    p = old.fill_ratio()
    rows = []
    for f in fractions:
        added = max(1, round(f * n))
        bits = base_bits.copy()
        bits[hash_positions_batch([rng.randbytes(17) for _ in range(added)], params).reshape(-1)] = True
        new = BloomFilter(params, bits, version=2)
        delta = delta_compute(old, new)
        size = len(delta.to_bytes())
        q_obs = delta.flip_count / params.m
        bound_bits = params.m * binary_entropy(q_obs)
        rows.append({
            "f": f,
            "added": added,
            "flips": delta.flip_count,
            "q_observed": q_obs,
            "q_model": delta_flip_probability(p, f),
            "delta_bytes": size,
            "entropy_bound_bytes": bound_bits / 8,
            "ratio": size * 8 / bound_bits if bound_bits else math.inf,
            "roundtrip": int(delta_apply(old, delta) == new),
        })
    return rows


# -- privacy ---------------------------------------------------------------

def run_privacy_experiment(cfg: SimConfig, v_mins: Iterable[int] | None = None) -> SimReport:
    """Newcomer batching as seen by a passive observer of all newcomer pseudonyms.

    For each publication, the anonymity set is the number of distinct
    newcomers whose keys pass the new snapshot but passed no earlier one.
    """
    report = SimReport("privacy")
    levels = sorted(set(v_mins if v_mins is not None else (1, cfg.v_min)))
    for v_min in levels:
        report.anonymity_sets[v_min] = _privacy_run(cfg, v_min, report)
    return report


def _privacy_run(cfg: SimConfig, v_min: int, report: SimReport) -> list[int]:
    if v_min < 1:
        raise DomainError("v_min must be >= 1")
    reg = PcaRegistry(cfg.filter_params(), seed=cfg.seed)
    for v in range(cfg.base_vehicles):
        reg.issue_batch(f"base{v}", cfg.pseudonyms_per_newcomer)
    state = PublicationState(reg, v_min=v_min)
    state.publish()

    rng = _stream(cfg.seed, _BENIGN)
    unseen: dict[str, list[bytes]] = {}
    sizes = []
    t = 0.0
    for i in range(cfg.newcomers):
        t += rng.expovariate(cfg.newcomer_rate) if cfg.newcomer_rate > 0 else 0.0
        name = f"new{i}"
        ps, pub = state.issue_newcomer(name, cfg.pseudonyms_per_newcomer)
        unseen[name] = [element_key(p, LifetimeMode.NON_OVERLAPPING) for p in ps]
        if pub is None:
            continue
        snap = reg.latest()
        names = list(unseen)
        hits = snap.query_many([k for nm in names for k in unseen[nm]])
        linked = [nm for nm, row in zip(names, hits.reshape(len(names), -1)) if row.any()]
        for nm in linked:
            del unseen[nm]
        sizes.append(len(linked))
    report.metrics[f"vmin_{v_min}_unpublished"] = len(state.pending)
    report.metrics[f"vmin_{v_min}_elapsed_s"] = t
    return sizes


def privacy_sweep(cfg: SimConfig, v_mins: Iterable[int]) -> list[dict]:
    rows = []
    for v_min in v_mins:
        sizes = run_privacy_experiment(cfg, [v_min]).anonymity_sets[v_min]
        rows.append({
            "v_min": v_min,
            "deltas": len(sizes),
            "anonymity_min": min(sizes, default=0),
            "anonymity_mean": sum(sizes) / len(sizes) if sizes else 0.0,
        })
    return rows


def queue_grid(cfg: SimConfig, cs: Iterable[float], gammas: Iterable[float],
               schemes: Iterable[Scheme] = (Scheme.BASELINE, Scheme.BF_BASED),
               arrivals: int | None = None) -> list[dict]:
    """Simulated and analytic mean system time over a grid; unstable points are skipped."""
    rows = []
    for gamma in gammas:
        for c in cs:
            for scheme in schemes:
                point = dataclasses.replace(cfg, c=c, gamma=gamma, scheme=Scheme(scheme))
                if point.c > point.gamma:
                    continue
                try:
                    analytic = avg_system_time(point.queue_params()).system_time
                except Unstable:
                    continue
                if arrivals is not None:
                    point = dataclasses.replace(
                        point, duration=arrivals / (gamma * point.N) / (1 - point.warmup_fraction))
                sim = run_queue_sim(point)
                rows.append({
                    "gamma": gamma,
                    "c": c,
                    "scheme": point.scheme.value,
                    "arrivals": sim.arrivals,
                    "T_sim_ms": sim.mean_system_time * 1e3,
                    "T_analytic_ms": analytic * 1e3,
                    "rel_error": sim.mean_system_time / analytic - 1,
                })
    return rows
