import math

import mpmath as mp
import pytest
from hypothesis import given, strategies as st

from psnym.analytics import (
    QueueModelParams,
    Scheme,
    avg_system_time,
    binary_entropy,
    compression_rate,
    delta_flip_probability,
    false_positive_rate,
    fig2_rows,
    fig4_rows,
    fig5_rows,
    max_stable_c,
    updated_bit_probability,
)
from psnym.errors import DomainError, Unstable

# frozen from a 50-digit mpmath evaluation
FP_80 = 2.0293295497491431e-17
FP_96 = 9.3072867672721713e-21
Q_P05_F001 = 3.4537522814820492e-3
H_P05_F001 = 3.3217569448872104e-2
Q_P05_F01 = 3.3483504231596292e-2
P_UPDATED_F01 = 0.51674175211579815


class TestFalsePositive:
    def test_m_over_n_80(self):
        assert false_positive_rate(80) == pytest.approx(FP_80, rel=1e-12)
        assert 1.8e-17 <= false_positive_rate(80) <= 2.2e-17

    def test_m_over_n_96(self):
        assert false_positive_rate(96) == pytest.approx(FP_96, rel=1e-12)

    def test_optimal_k_closed_forms(self):
        for bpe in (4, 16, 33.3, 100):
            fp = false_positive_rate(bpe)
            assert fp == pytest.approx(0.5 ** (bpe * math.log(2)), rel=1e-12)
            assert fp == pytest.approx(0.6185 ** bpe, rel=1e-3 * bpe)

    def test_explicit_integer_k(self):
        assert false_positive_rate(16, 11) == pytest.approx((1 - math.exp(-11 / 16)) ** 11)

    def test_monotone_decreasing(self):
        rates = [false_positive_rate(b) for b in range(1, 200)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    @pytest.mark.parametrize("bad", [0, -1])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            false_positive_rate(bad)


class TestDeltaModel:
    def test_f_zero(self):
        assert delta_flip_probability(0.5, 0) == 0
        assert compression_rate(0.5, 0) == 0

    def test_reference_point(self):
        assert delta_flip_probability(0.5, 0.01) == pytest.approx(Q_P05_F001, rel=1e-13)
        assert compression_rate(0.5, 0.01) == pytest.approx(H_P05_F001, rel=1e-13)

    def test_matches_mpmath(self):
        mp.mp.dps = 40
        for p, f in [(0.3, 0.2), (0.5, 0.001), (0.7, 1.5)]:
            q = mp.mpf(p) * (1 - mp.mpf(p) ** mp.mpf(f))
            h = -q * mp.log(q, 2) - (1 - q) * mp.log(1 - q, 2)
            assert compression_rate(p, f) == pytest.approx(float(h), rel=1e-12)

    def test_monotone_in_f(self):
        qs = [delta_flip_probability(0.5, f / 100) for f in range(0, 300)]
        assert all(a < b for a, b in zip(qs, qs[1:]))

    def test_entropy_maximum_and_symmetry(self):
        assert binary_entropy(0.5) == 1.0

    @given(st.floats(0, 1))
    def test_entropy_range_and_symmetry(self, q):
        h = binary_entropy(q)
        assert 0 <= h <= 1
        assert h == pytest.approx(binary_entropy(1 - q), abs=1e-12)

    def test_updated_bit_probability(self):
        assert updated_bit_probability(0.4, 0) == 0.4
        assert updated_bit_probability(0, 0.2) == 0.2
        q = delta_flip_probability(0.5, 0.1)
        assert q == pytest.approx(Q_P05_F01, rel=1e-13)
        assert updated_bit_probability(0.5, q) == pytest.approx(P_UPDATED_F01, rel=1e-13)

    def test_domain(self):
        with pytest.raises(DomainError):
            delta_flip_probability(1.0, 0.1)
        with pytest.raises(DomainError):
            delta_flip_probability(0.5, -0.1)


def _t(c, scheme, N=50, gamma=3, tau=0.004):
    return avg_system_time(QueueModelParams(N, c, gamma, tau, scheme))


class TestQueueModel:
    def test_reference_point(self):
        base, bf = _t(0.6, Scheme.BASELINE), _t(0.6, Scheme.BF_BASED)
        assert base.system_time * 1e3 == pytest.approx(11.657142857, abs=1e-9)
        assert bf.system_time * 1e3 == pytest.approx(7.0, abs=1e-12)
        assert base.rho == pytest.approx(0.72) and bf.rho == pytest.approx(0.6)
        assert base.system_time >= base.mean_service

    def test_single_class_md1(self):
        lam, tau = 120, 0.004
        for scheme in Scheme:
            r = avg_system_time(QueueModelParams(40, 0, 3, tau, scheme))
            assert r.system_time == pytest.approx(tau + lam * tau**2 / (2 * (1 - lam * tau)), rel=1e-13)

    def test_bf_constant_in_c(self):
        ts = {_t(c / 10, Scheme.BF_BASED).system_time for c in range(0, 31)}
        assert len(ts) == 1

    def test_baseline_increasing_in_c(self):
        ts = [_t(c / 10, Scheme.BASELINE).system_time for c in range(0, 20)]
        assert all(a < b for a, b in zip(ts, ts[1:]))

    def test_unstable(self):
        with pytest.raises(Unstable) as info:
            _t(2.0, Scheme.BASELINE)
        assert info.value.rho == pytest.approx(1.0)

    def test_hash_cost_enters_class_one(self):
        p = QueueModelParams(50, 0.6, 3, 0.004, Scheme.BF_BASED, hash_cost=2e-6)
        assert p.service_times == (0.004 + 2e-6, 0.004)
        assert avg_system_time(p).system_time > 0.007

    @pytest.mark.parametrize("kw", [dict(N=0), dict(c=-1), dict(c=4), dict(gamma=0)])
    def test_domain(self, kw):
        args = dict(N=50, c=0.6, gamma=3, tau=0.004) | kw
        with pytest.raises(DomainError):
            QueueModelParams(**args)


class TestSweeps:
    def test_fig2(self):
        rows = fig2_rows()
        assert rows[0]["bits_per_element"] == 8 and rows[-1]["bits_per_element"] == 128
        row80 = next(r for r in rows if r["bits_per_element"] == 80)
        assert row80["fp_rate"] == pytest.approx(FP_80, rel=1e-12)

    def test_fig4(self):
        rows = fig4_rows(0.5)
        assert rows[0]["compression_rate"] == 0
        assert len(rows) == 101 and rows[-1]["f"] == 1.0

    def test_fig5(self):
        rows = fig5_rows(50, 3, 0.004)
        assert max_stable_c(50, 3, 0.004) == pytest.approx(2.0)
        assert [r["c"] for r in rows] == [round(i / 10, 12) for i in range(20)]
        assert len({r["T_bf_ms"] for r in rows}) == 1
        row = rows[6]
        assert row["T_baseline_ms"] == pytest.approx(11.657142857) and row["T_bf_ms"] == pytest.approx(7.0)
