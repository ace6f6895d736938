"""Closed-form models: filter false-positive rate, delta compression, and the
two-class M/D/1 verification queue.

All functions are pure. Sweep helpers return lists of row dicts in grid order
so callers can write them straight to CSV.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import DomainError, Unstable

LN2 = math.log(2)


def optimal_k_real(bits_per_element: float) -> float:
    return bits_per_element * LN2


def false_positive_rate(bits_per_element: float, k: float | None = None) -> float:
    """``(1 - exp(-k n / m))**k``; k defaults to the real-valued optimum ``(m/n) ln 2``."""
    if not bits_per_element > 0:
        raise DomainError(f"bits per element must be positive, got {bits_per_element}")
    if k is None:
        k = optimal_k_real(bits_per_element)
    if not k > 0:
        raise DomainError(f"k must be positive, got {k}")
    return (-math.expm1(-k / bits_per_element)) ** k


def _check_p(p: float) -> None:
    if not 0 < p < 1:
        raise DomainError(f"bit probability must be in (0, 1), got {p}")


def delta_flip_probability(p: float = 0.5, f: float = 0.0) -> float:
    """Probability that a bit flips after a fraction ``f`` more elements is added."""
    _check_p(p)
    if f < 0:
        raise DomainError(f"added fraction must be >= 0, got {f}")
    return -p * math.expm1(f * math.log(p))


def binary_entropy(q: float) -> float:
    if not 0 <= q <= 1:
        raise DomainError(f"probability out of range: {q}")
    if q in (0.0, 1.0):
        return 0.0
    return -q * math.log2(q) - (1 - q) * math.log2(1 - q)


def compression_rate(p: float = 0.5, f: float = 0.0) -> float:
    """Compressed delta size per filter bit, ``H(q)`` with ``q = p (1 - p**f)``."""
    return binary_entropy(delta_flip_probability(p, f))


def updated_bit_probability(p: float, q: float) -> float:
    if not (0 <= p <= 1 and 0 <= q <= 1):
        raise DomainError("p and q must lie in [0, 1]")
    return p + (1 - p) * q


def delta_entropy_bound_bits(m: int, q: float) -> float:
    return m * binary_entropy(q)


class Scheme(str, enum.Enum):
    BASELINE = "baseline"
    BF_BASED = "bf"


@dataclass(frozen=True)
class QueueModelParams:
    """Verification queue of one receiver.

    ``N`` neighbours each send ``gamma`` beacons/s; ``c`` is the per-second
    neighbour refresh ratio, so ``c * N`` beacons/s arrive under new pseudonyms.
    ``hash_cost`` is the filter-test time added to new-pseudonym messages under
    the filter scheme (zero in the idealised model).
    """

    N: int
    c: float
    gamma: float
    tau: float = 0.004
    scheme: Scheme = Scheme.BF_BASED
    hash_cost: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise DomainError("N must be >= 1")
        if self.gamma <= 0 or self.tau <= 0:
            raise DomainError("gamma and tau must be positive")
        if self.c < 0:
            raise DomainError("c must be >= 0")
        if self.c > self.gamma:
            raise DomainError(f"new-pseudonym rate c*N exceeds total rate gamma*N (c={self.c}, gamma={self.gamma})")
        if self.hash_cost < 0:
            raise DomainError("hash_cost must be >= 0")

    @property
    def class_rates(self) -> tuple[float, float]:
        lam1 = self.c * self.N
        return lam1, self.gamma * self.N - lam1

    @property
    def service_times(self) -> tuple[float, float]:
        if Scheme(self.scheme) is Scheme.BASELINE:
            return 2 * self.tau, self.tau
        return self.tau + self.hash_cost, self.tau

    @property
    def utilization(self) -> float:
        s1, s2 = self.service_times
        return self.gamma * self.N * s2 + self.c * self.N * (s1 - s2)


@dataclass(frozen=True)
class QueueModelResult:
    mean_service: float
    rho: float
    system_time: float


def avg_system_time(params: QueueModelParams) -> QueueModelResult:
    """Mean time from arrival to end of verification (Pollaczek-Khinchine, two classes)."""
    # written as total rate plus class-1 excess so S1 == S2 gives a result exactly independent of c
    (l1, _), (s1, s2) = params.class_rates, params.service_times
    lam = params.gamma * params.N
    rho = params.utilization
    if rho >= 1:
        raise Unstable(rho)
    mean_s = rho / lam
    t = mean_s + (lam * s2**2 + l1 * (s1**2 - s2**2)) / (2 * (1 - rho))
    return QueueModelResult(mean_s, rho, t)


def max_stable_c(N: int, gamma: float, tau: float) -> float:
    """Largest refresh ratio for which the baseline queue stays below rho = 1 (exclusive)."""
    return min(gamma, (1 - gamma * N * tau) / (N * tau))


def _grid(start: float, stop: float, step: float) -> list[float]:
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + i * step, 12) for i in range(n + 1)]


def fig2_rows(lo: float = 8, hi: float = 128, step: float = 1) -> list[dict]:
    rows = []
    for bpe in _grid(lo, hi, step):
        k_int = max(1, round(optimal_k_real(bpe)))
        rows.append({
            "bits_per_element": bpe,
            "k_opt": optimal_k_real(bpe),
            "fp_rate": false_positive_rate(bpe),
            "k_int": k_int,
            "fp_rate_int_k": false_positive_rate(bpe, k_int),
        })
    return rows


def fig4_rows(p: float = 0.5, f_max: float = 1.0, step: float = 0.01) -> list[dict]:
    rows = []
    for f in _grid(0.0, f_max, step):
        q = delta_flip_probability(p, f)
        rows.append({
            "f": f,
            "q": q,
            "compression_rate": binary_entropy(q),
            "p_updated": updated_bit_probability(p, q),
        })
    return rows


def fig5_rows(N: int = 50, gamma: float = 3, tau: float = 0.004, step: float = 0.1, hash_cost: float = 0.0) -> list[dict]:
    """T for both schemes over ``c`` in ``[0, c_max)`` where the baseline is stable."""
    rows = []
    for c in _grid(0.0, gamma, step):
        try:
            base = avg_system_time(QueueModelParams(N, c, gamma, tau, Scheme.BASELINE))
            bf = avg_system_time(QueueModelParams(N, c, gamma, tau, Scheme.BF_BASED, hash_cost))
        except Unstable:
            break
        rows.append({
            "c": c,
            "T_baseline_ms": base.system_time * 1e3,
            "T_bf_ms": bf.system_time * 1e3,
            "rho_baseline": base.rho,
            "rho_bf": bf.rho,
        })
    return rows
