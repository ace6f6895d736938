import hashlib
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psnym.analytics import binary_entropy
from psnym.errors import CorruptPayload, ParamsMismatch, Underflow, VersionMismatch
from psnym.filters import (
    BfDelta,
    BloomFilter,
    CountingBloomFilter,
    FilterParams,
    HashList,
    delta_apply,
    delta_compute,
    hash_positions,
    hash_positions_batch,
)


def oracle_positions(key: bytes, seed: int, m: int, k: int) -> list[int]:
    # independent route: hex digest parsed as text
    hx = hashlib.sha256(seed.to_bytes(8, "big") + key).hexdigest()
    h1, h2 = int(hx[:16], 16), int(hx[16:32], 16)
    return [(h1 + i * h2) % m for i in range(k)]


def rand_keys(rng, n, size=16):
    return [rng.randbytes(size) for _ in range(n)]


class TestParams:
    @pytest.mark.parametrize("m,k", [(0, 1), (12, 1), (16, 0), (16, 65)])
    def test_invalid(self, m, k):
        with pytest.raises(ValueError):
            FilterParams(m=m, k=k)

    def test_for_capacity_rounds_to_bytes(self):
        p = FilterParams.for_capacity(10, 16.3)
        assert p.m % 8 == 0 and p.m >= 163
        assert p.k == round(p.m / 10 * math.log(2))

    def test_k_clamped_to_64(self):
        assert FilterParams.for_capacity(1000, 96).k == 64


class TestHashPositions:
    def test_golden_vector(self):
        p = FilterParams(m=1024, k=4, seed=0)
        assert hash_positions(b"A", p) == [886, 303, 744, 161]
        assert oracle_positions(b"A", 0, 1024, 4) == [886, 303, 744, 161]

    def test_k1_is_h1_mod_m(self):
        rng = random.Random(1)
        for key in rand_keys(rng, 50):
            d = hashlib.sha256(bytes(8) + key).digest()
            assert hash_positions(key, FilterParams(m=4096, k=1)) == [int.from_bytes(d[:8], "big") % 4096]

    def test_matches_oracle_and_batch(self):
        rng = random.Random(2)
        keys = rand_keys(rng, 300)
        for m, k, seed in [(8, 3, 0), (1024, 11, 7), (9_600_000, 64, 2**64 - 1)]:
            p = FilterParams(m=m, k=k, seed=seed)
            batch = hash_positions_batch(keys, p)
            for key, row in zip(keys, batch):
                ref = oracle_positions(key, seed, m, k)
                assert hash_positions(key, p) == ref
                assert row.tolist() == ref

    def test_seed_separates_domains(self):
        rng = random.Random(3)
        a, b = FilterParams(m=2**20, k=8, seed=1), FilterParams(m=2**20, k=8, seed=2)
        for key in rand_keys(rng, 100):
            assert hash_positions(key, a) != hash_positions(key, b)


class TestCountingFilter:
    params = FilterParams(m=2048, k=5)

    def test_insert_sets_distinct_positions_to_one(self):
        cbf = CountingBloomFilter(self.params)
        cbf.insert(b"x")
        pos = set(hash_positions(b"x", self.params))
        assert set(np.flatnonzero(cbf.counters).tolist()) == pos
        assert all(cbf.counters[i] == 1 for i in pos)

    def test_insert_twice(self):
        cbf = CountingBloomFilter(self.params)
        cbf.insert(b"x")
        cbf.insert(b"x")
        assert set(cbf.count_at(b"x")) == {2}

    def test_saturation_from_colliding_keys(self):
        p = FilterParams(m=64, k=1)
        rng = random.Random(4)
        colliding = []
        while len(colliding) < 17:
            key = rng.randbytes(8)
            if hash_positions(key, p) == [0]:
                colliding.append(key)
        cbf = CountingBloomFilter(p)
        for key in colliding:
            cbf.insert(key)
        assert cbf.counters[0] == 15
        assert cbf.overflow_count == 2
        # saturated counters are never decremented
        for key in colliding:
            cbf.delete(key)
        assert cbf.counters[0] == 15
        assert cbf.project().query(colliding[0])

    def test_insert_delete_inverse(self):
        cbf = CountingBloomFilter(self.params)
        cbf.insert(b"x")
        cbf.delete(b"x")
        assert not cbf.counters.any()

    def test_delete_from_empty_underflows(self):
        cbf = CountingBloomFilter(self.params)
        with pytest.raises(Underflow):
            cbf.delete(b"never")
        assert not cbf.counters.any()

    def test_delete_many_is_atomic(self):
        cbf = CountingBloomFilter(self.params)
        cbf.insert(b"a")
        before = cbf.counters.copy()
        with pytest.raises(Underflow):
            cbf.delete_many([b"a", b"never-inserted"])
        assert np.array_equal(cbf.counters, before)

    def test_batch_equals_sequential(self):
        p = FilterParams(m=256, k=7)
        rng = random.Random(5)
        keys = rand_keys(rng, 200) + [b"dup"] * 20
        seq, bat = CountingBloomFilter(p), CountingBloomFilter(p)
        for key in keys:
            seq.insert(key)
        bat.insert_many(keys)
        assert seq == bat and seq.overflow_count > 0
        gone = keys[:50]
        for key in gone:
            seq.delete(key)
        bat.delete_many(gone)
        assert seq == bat

    def test_delete_equivalence(self):
        rng = random.Random(6)
        for _ in range(1000):
            a = rand_keys(rng, rng.randint(1, 12))
            b = rand_keys(rng, rng.randint(1, 6))
            both = CountingBloomFilter(self.params)
            for key in a + b:
                both.insert(key)
            assert both.counters.max() < both.max_count
            for key in b:
                both.delete(key)
            only_a = CountingBloomFilter(self.params)
            only_a.insert_many(a)
            assert np.array_equal(both.project().bits, only_a.project().bits)

    def test_projection_matches_standard_filter(self):
        rng = random.Random(7)
        keys = rand_keys(rng, 150)
        cbf = CountingBloomFilter(self.params)
        cbf.insert_many(keys)
        std = BloomFilter.from_keys(self.params, keys)
        assert np.array_equal(cbf.project().bits, std.bits)
        probes = keys + rand_keys(rng, 500)
        assert [cbf.project().query(k) for k in probes] == [std.query(k) for k in probes]

    def test_project_empty_and_single(self):
        cbf = CountingBloomFilter(self.params)
        assert cbf.project().popcount() == 0
        cbf.insert(b"one")
        assert 1 <= cbf.project(version=3).popcount() <= self.params.k
        assert cbf.project(version=3).version == 3

    def test_fill_ratio_desk_scale(self):
        p = FilterParams.for_capacity(10_000, 16)
        assert p.k == 11
        cbf = CountingBloomFilter(p)
        cbf.insert_many(rand_keys(random.Random(8), 10_000))
        # expectation 1 - exp(-k n / m) = 0.497
        assert 0.45 <= cbf.project().fill_ratio() <= 0.55


class TestQuery:
    def test_empty_filter(self):
        bf = BloomFilter(FilterParams(m=1024, k=3))
        assert not any(bf.query(k) for k in rand_keys(random.Random(9), 100))

    def test_no_false_negatives(self):
        p = FilterParams.for_capacity(10_000, 16)
        keys = rand_keys(random.Random(10), 10_000)
        bf = BloomFilter.from_keys(p, keys)
        assert bf.query_many(keys).all()
        assert all(bf.query(k) for k in keys[:2000])

    def test_query_many_matches_scalar(self):
        rng = random.Random(11)
        keys = rand_keys(rng, 300)
        bf = BloomFilter.from_keys(FilterParams(m=1024, k=4), keys[:100])
        assert bf.query_many(keys).tolist() == [bf.query(k) for k in keys]


class TestDelta:
    params = FilterParams(m=4096, k=4)

    def _bf(self, bits, version):
        return BloomFilter(self.params, bits, version=version)

    def test_identical_snapshots(self):
        bf = self._bf(np.random.default_rng(0).random(4096) < 0.5, 1)
        d = delta_compute(bf, bf)
        assert d.flip_count == 0
        assert len(d.to_bytes()) == 4 + 1 + 8 * 3 + 4

    def test_single_flip(self):
        old = self._bf(np.zeros(4096, bool), 1)
        bits = np.zeros(4096, bool)
        bits[7] = True
        d = delta_compute(old, self._bf(bits, 2))
        assert d.flipped_positions.tolist() == [7]

    def test_empty_delta_advances_version(self):
        old = self._bf(np.zeros(4096, bool), 4)
        out = delta_apply(old, BfDelta(4, 5, []))
        assert out.version == 5 and np.array_equal(out.bits, old.bits)

    def test_version_mismatch(self):
        old = self._bf(np.zeros(4096, bool), 4)
        with pytest.raises(VersionMismatch):
            delta_apply(old, BfDelta(3, 5, []))
        with pytest.raises(VersionMismatch):
            delta_compute(self._bf(np.ones(4096, bool), 5), old)

    def test_params_mismatch(self):
        a = BloomFilter(FilterParams(m=4096, k=4), version=1)
        b = BloomFilter(FilterParams(m=4096, k=5), version=2)
        with pytest.raises(ParamsMismatch):
            delta_compute(a, b)
        with pytest.raises(ParamsMismatch):
            delta_apply(BloomFilter(FilterParams(m=8, k=1)), BfDelta(0, 1, [9]))

    def test_round_trip_random_pairs(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            old = self._bf(rng.random(4096) < 0.5, 1)
            bits = old.bits.copy()
            flips = rng.choice(4096, size=rng.integers(0, 200), replace=False)
            bits[flips] ^= True
            new = self._bf(bits, 2)
            d = BfDelta.from_bytes(delta_compute(old, new).to_bytes())
            assert delta_apply(old, d) == new
            assert np.array_equal(np.flatnonzero(old.bits ^ delta_apply(old, d).bits), d.flipped_positions)

    def test_size_near_entropy_bound(self):
        p = FilterParams.for_capacity(20_000, 32)
        rng = random.Random(13)
        cbf = CountingBloomFilter(p)
        cbf.insert_many(rand_keys(rng, 20_000))
        old = cbf.project(version=1)
        cbf.insert_many(rand_keys(rng, 200))
        new = cbf.project(version=2)
        d = delta_compute(old, new)
        q = d.flip_count / p.m
        assert 0 < len(d.to_bytes()) * 8 <= 3 * p.m * binary_entropy(q)

    def test_corruption_detected(self):
        d = BfDelta(1, 2, [3, 200, 201]).to_bytes()
        for i in range(len(d)):
            bad = bytearray(d)
            bad[i] ^= 0x01
            with pytest.raises(CorruptPayload):
                BfDelta.from_bytes(bytes(bad))


class TestSerialization:
    def test_snapshot_layout(self):
        p = FilterParams(m=16, k=2, seed=0x0102030405060708)
        bits = np.zeros(16, bool)
        bits[[0, 9]] = True
        raw = BloomFilter(p, bits, version=5, coverage_start=100, coverage_length=86400).to_bytes()
        assert raw[:4] == b"PBF1" and raw[4] == 1
        assert raw[5:13] == bytes(range(1, 9))
        assert int.from_bytes(raw[13:21], "big") == 16 and raw[21] == 2
        assert int.from_bytes(raw[22:30], "big") == 5
        assert int.from_bytes(raw[30:38], "big") == 100
        assert int.from_bytes(raw[38:46], "big") == 86400
        assert raw[46:48] == bytes([0x80, 0x40])
        assert len(raw) == 52

    def test_snapshot_corruption(self):
        raw = BloomFilter(FilterParams(m=64, k=2)).to_bytes()
        with pytest.raises(CorruptPayload):
            BloomFilter.from_bytes(raw[:-1] + bytes([raw[-1] ^ 1]))
        with pytest.raises(CorruptPayload):
            BloomFilter.from_bytes(b"PBF1")

    @settings(max_examples=60, deadline=None)
    @given(
        nbytes=st.integers(1, 64),
        k=st.integers(1, 64),
        seed=st.integers(0, 2**64 - 1),
        version=st.integers(0, 2**64 - 1),
        data=st.data(),
    )
    def test_snapshot_round_trip(self, nbytes, k, seed, version, data):
        p = FilterParams(m=nbytes * 8, k=k, seed=seed)
        raw = data.draw(st.binary(min_size=nbytes, max_size=nbytes))
        bits = np.unpackbits(np.frombuffer(raw, np.uint8)).astype(bool)
        bf = BloomFilter(p, bits, version=version, coverage_start=7, coverage_length=9)
        assert BloomFilter.from_bytes(bf.to_bytes()) == bf

    @settings(max_examples=60, deadline=None)
    @given(
        counter_bits=st.integers(1, 8),
        keys=st.lists(st.binary(min_size=1, max_size=8), max_size=40),
    )
    def test_counting_round_trip(self, counter_bits, keys):
        cbf = CountingBloomFilter(FilterParams(m=64, k=3, n_target=5, seed=3), counter_bits)
        cbf.insert_many(keys)
        assert CountingBloomFilter.from_bytes(cbf.to_bytes()) == cbf

    @settings(max_examples=100, deadline=None)
    @given(
        positions=st.sets(st.integers(0, 2**40), max_size=50),
        versions=st.tuples(st.integers(0, 2**63), st.integers(0, 2**63)),
    )
    def test_delta_round_trip(self, positions, versions):
        d = BfDelta(versions[0], versions[1], sorted(positions))
        assert BfDelta.from_bytes(d.to_bytes()) == d


def test_hash_list_oracle():
    rng = random.Random(14)
    keys = rand_keys(rng, 500)
    hl = HashList(keys)
    bf = BloomFilter.from_keys(FilterParams.for_capacity(500, 16), keys)
    assert all(hl.contains(k) and hl.contains_linear(k) for k in keys[:50])
    others = rand_keys(rng, 200)
    assert not any(hl.contains(k) for k in others)
    assert hl.size_bits() > bf.params.m

