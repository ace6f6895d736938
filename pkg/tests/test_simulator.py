import dataclasses
import logging

import pytest

from psnym.analytics import QueueModelParams, Scheme, avg_system_time
from psnym.errors import BadSpec, DomainError, Unstable
from psnym.simulator import (
    EventKind,
    EventQueue,
    SimConfig,
    config_from,
    delta_size_experiment,
    measure_fp_rate,
    parse_config,
    privacy_sweep,
    queue_grid,
    run_bruteforce_attack,
    run_clogging_attack,
    run_privacy_experiment,
    run_queue_sim,
)
from psnym.validation import Outcome


class TestEventQueue:
    def test_fifo_tie_break(self):
        q = EventQueue()
        for i in range(5):
            q.push(1.0, EventKind.BEACON, i)
        q.push(0.5, EventKind.ATTACK, "first")
        assert [q.pop().payload for _ in range(6)] == ["first", 0, 1, 2, 3, 4]


class TestConfig:
    def test_parse(self):
        text = """
        # comment
        N = 20
        gamma: 2.5
        tau_ms = 5
        scheme = baseline
        unlimited_budget = yes   # trailing comment
        """
        cfg = config_from(parse_config(text))
        assert (cfg.N, cfg.gamma, cfg.tau, cfg.scheme, cfg.unlimited_budget) == (20, 2.5, 0.005, Scheme.BASELINE, True)

    @pytest.mark.parametrize("text", ["bogus = 1", "N = many", "just words", "adaptive_budget = maybe"])
    def test_bad(self, text):
        with pytest.raises(BadSpec):
            parse_config(text)

    def test_overrides_win_and_none_ignored(self):
        cfg = config_from({"N": 5}, N=7, c=None)
        assert cfg.N == 7 and cfg.c == SimConfig().c

    @pytest.mark.parametrize("kw", [{"duration": -1}, {"attack_rate": -1}, {"c": 4, "gamma": 3}, {"N": 0}])
    def test_invariants(self, kw):
        with pytest.raises(DomainError):
            SimConfig(**kw)

    def test_for_arrivals(self):
        cfg = SimConfig.for_arrivals(9000, N=10, gamma=1)
        assert cfg.duration == pytest.approx(1000)


class TestQueueSim:
    def test_zero_duration(self):
        r = run_queue_sim(SimConfig(duration=0))
        assert (r.arrivals, r.served, r.mean_system_time) == (0, 0, 0.0) and r.conserved

    def test_reproducible(self):
        cfg = SimConfig(duration=60, seed=3)
        assert run_queue_sim(cfg) == run_queue_sim(cfg)
        assert run_queue_sim(cfg) != run_queue_sim(dataclasses.replace(cfg, seed=4))

    def test_conservation_with_drops(self):
        r = run_queue_sim(SimConfig(duration=30, c=2.0, scheme=Scheme.BASELINE, max_queue=3))
        assert r.rejected > 0 and r.conserved

    def test_c_zero_matches_md1(self):
        cfg = SimConfig.for_arrivals(100_000, c=0.0)
        r = run_queue_sim(cfg)
        analytic = avg_system_time(QueueModelParams(50, 0.0, 3, 0.004, Scheme.BF_BASED, cfg.hash_cost)).system_time
        assert r.mean_system_time == pytest.approx(analytic, rel=0.05)
        assert r.class_counts.get("1", 0) == 0

    def test_scheme_ratio(self):
        base = run_queue_sim(SimConfig.for_arrivals(100_000, scheme=Scheme.BASELINE))
        bf = run_queue_sim(SimConfig.for_arrivals(100_000, scheme=Scheme.BF_BASED))
        assert base.mean_system_time / bf.mean_system_time == pytest.approx(11.657 / 7.0, abs=0.1)

    def test_cpu_split(self):
        base = run_queue_sim(SimConfig(duration=60, scheme=Scheme.BASELINE))
        bf = run_queue_sim(SimConfig(duration=60))
        assert base.cpu_hash_time == 0 and bf.cpu_hash_time == pytest.approx(bf.class_counts["1"] * 2e-6, rel=0.05)
        assert bf.cpu_signature_time < base.cpu_signature_time

    def test_unstable_warns_and_grows(self, caplog):
        cfg = SimConfig(duration=20, c=3.0, scheme=Scheme.BASELINE, N=100)
        with caplog.at_level(logging.WARNING):
            r = run_queue_sim(cfg)
        assert "UnstableConfig" in caplog.text and r.queued_at_end > 100
        with pytest.raises(Unstable):
            run_queue_sim(dataclasses.replace(cfg, allow_unstable=False))

    def test_grid_rows(self):
        rows = queue_grid(SimConfig(), cs=[0.0, 2.9], gammas=[3], arrivals=2000)
        # c=2.9 is unstable for the baseline only
        assert [(r["c"], r["scheme"]) for r in rows] == [(0.0, "baseline"), (0.0, "bf"), (2.9, "bf")]


class TestClogging:
    def test_no_attack_equals_queue_sim(self):
        cfg = SimConfig(duration=60)
        a, b = run_clogging_attack(cfg), run_queue_sim(cfg)
        assert (a.arrivals, a.outcomes, a.mean_system_time) == (b.arrivals, b.outcomes, b.mean_system_time)

    @pytest.mark.parametrize("adaptive", [True, False])
    def test_budget_bound(self, adaptive):
        cfg = SimConfig(duration=60, attack_rate=1000, adaptive_budget=adaptive)
        r = run_clogging_attack(cfg)
        m = r.metrics
        assert m["attack_fallback_verifications"] <= 20 * 60 + 40
        assert r.conserved and r.class_counts["attack"] > 50_000
        assert m["rho_unlimited"] >= 1 and m["unlimited_unstable"] == 1
        assert r.outcomes[Outcome.REJECTED_BUDGET_EXHAUSTED.value] > 0
        if adaptive:
            assert m["final_fallback_rate"] == cfg.fallback_rate_floor
            assert m["benign_T_degradation"] < 0.10

    def test_unlimited_budget_diverges(self):
        r = run_clogging_attack(SimConfig(duration=5, attack_rate=1000, unlimited_budget=True))
        assert r.queued_at_end > 1000 and "fallback_bound" not in r.metrics

    def test_benign_stream_shared(self):
        r = run_clogging_attack(SimConfig(duration=30, attack_rate=200))
        ref = run_queue_sim(SimConfig(duration=30))
        assert r.class_counts["1"] == ref.class_counts["1"] and r.class_counts["2"] == ref.class_counts["2"]


class TestBruteforce:
    def test_geometric_mean(self):
        r = run_bruteforce_attack(SimConfig(bruteforce_runs=100, bruteforce_keypairs=0, max_fake_uses=1))
        m = r.metrics
        assert len(r.trials) == 100 and min(r.trials) >= 1
        # 100 geometric draws: sd of the mean is about 10%
        assert m["mean_trials"] == pytest.approx(m["expected_trials"], rel=0.3)

    def test_detected_on_first_use(self):
        r = run_bruteforce_attack(SimConfig(bruteforce_runs=10, bruteforce_keypairs=0, cross_verify_probability=1.0))
        assert r.metrics["mean_fakes_accepted_before_detection"] == 0
        assert r.outcomes == {Outcome.DETECTED_FAKE_REPORTED.value: 10, Outcome.REJECTED_FPL_HIT.value: 10}

    def test_no_cross_check_accepts_every_use(self):
        r = run_bruteforce_attack(SimConfig(bruteforce_runs=3, bruteforce_keypairs=0, max_fake_uses=50))
        assert r.metrics["mean_fakes_accepted_before_detection"] == 50

    def test_slot_reuse(self):
        m = run_bruteforce_attack(SimConfig(bruteforce_runs=1, bruteforce_keypairs=2000, max_fake_uses=1)).metrics
        assert abs(m["keypair_pass_rate"] - m["keypair_pass_expected"]) <= 3 * m["keypair_pass_sigma"]
        assert m["keypair_pass_expected"] <= m["keypair_pass_union_bound"]

    def test_rejects_strong_filter(self):
        with pytest.raises(DomainError):
            run_bruteforce_attack(SimConfig(bits_per_element=40, k=None, filter_n=500))


class TestFilterExperiments:
    def test_measure_fp(self):
        r = measure_fp_rate(n=2000, bits_per_element=10, k=7, probes=200_000, seed=1)
        est = r.fill_ratio ** r.k
        assert abs(r.observed - est) < 4 * (est / r.probes) ** 0.5
        assert r.sigma == pytest.approx((0.5**7 * (1 - 0.5**7) / 200_000) ** 0.5)

    def test_delta_size(self):
        rows = delta_size_experiment(n=5000, bits_per_element=32, fractions=[0.01, 0.1])
        for row in rows:
            assert row["roundtrip"] == 1 and row["ratio"] <= 3
            assert row["q_observed"] == pytest.approx(row["q_model"], rel=0.3)
        assert rows[0]["flips"] < rows[1]["flips"]


class TestPrivacy:
    def test_three_newcomers_unbatched(self):
        r = run_privacy_experiment(SimConfig(newcomers=3, base_vehicles=5), [1])
        assert r.anonymity_sets == {1: [1, 1, 1]}

    def test_batched(self):
        r = run_privacy_experiment(SimConfig(newcomers=12, base_vehicles=5, v_min=5))
        assert r.anonymity_sets[5] == [5, 5]
        assert r.anonymity_sets[1] == [1] * 12
        assert r.metrics["vmin_5_unpublished"] == 2

    def test_sweep_monotone(self):
        rows = privacy_sweep(SimConfig(newcomers=40, base_vehicles=5), [1, 2, 5, 10, 20])
        means = [r["anonymity_mean"] for r in rows]
        assert means == sorted(means)
        assert all(r["anonymity_min"] >= r["v_min"] for r in rows)

    def test_summary_rows(self):
        r = run_privacy_experiment(SimConfig(newcomers=3, base_vehicles=5), [1])
        rows = dict(r.summary_rows())
        assert rows["vmin_1_deltas"] == 3 and rows["vmin_1_anonymity_min"] == 1
