"""Admission-control tests."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from overbook.admission import (
    AdmissionDecision,
    AtomicityError,
    ConfigurationError,
    TenantRegistry,
    atomic_factors,
    split_demand,
)
from overbook.bounds import TierSpec, chernoff_tail, multiclass_overflow
from overbook.curves import BurstinessCurve, token_bucket
from overbook.service_time import Empirical, TruncatedGamma, TruncatedWeibull
from overbook.simulator import Scenario, run
from test_simulator import greedy_trace

MODEL = TruncatedWeibull(scale=1.0, shape=5.0, s_max=1.4)
CURVE = token_bucket(5.0, 100.0)


def standard_tier(name="standard") -> TierSpec:
    return TierSpec(
        name=name, curve=CURVE, s_max=1.4, demand={"slot": 1.0}, model=MODEL
    )


def registry(epsilon=0.01) -> TenantRegistry:
    reg = TenantRegistry(epsilon)
    reg.add_tier(standard_tier())
    return reg


class TestRegistry:
    def test_duplicate_tier_rejected(self):
        reg = registry()
        with pytest.raises(ValueError):
            reg.add_tier(standard_tier())

    def test_unknown_tier(self):
        reg = registry()
        with pytest.raises(ValueError):
            reg.admit_no_blocking("premium", 100)

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            TenantRegistry(0.0)
        with pytest.raises(ValueError):
            TenantRegistry(1.0)

    def test_remove_tenant(self):
        reg = registry()
        tenant = reg.admit_no_blocking("standard", 145)
        assert tenant.admitted
        ident = reg.tenants[0].ident
        reg.remove_tenant(ident)
        assert reg.tenants == ()
        with pytest.raises(ValueError):
            reg.remove_tenant(ident)


class TestNoBlockingAdmission:
    def test_exact_fit_admits_with_zero_slack(self):
        decision = registry().admit_no_blocking("standard", 145)
        assert decision.admitted
        assert decision.bound_or_slack == pytest.approx(0.0, abs=1e-9)

    def test_one_short_rejects(self):
        reg = registry()
        decision = reg.admit_no_blocking("standard", 144)
        assert not decision.admitted
        assert decision.bound_or_slack == pytest.approx(-1.0, abs=1e-9)
        assert reg.tenants == ()

    def test_two_admissions_fit_double_capacity(self):
        reg = registry()
        assert reg.admit_no_blocking("standard", 290).admitted
        assert reg.admit_no_blocking("standard", 290).admitted
        assert not reg.admit_no_blocking("standard", 290).admitted
        assert len(reg.tenants) == 2

    def test_departure_frees_capacity(self):
        reg = registry()
        assert reg.admit_no_blocking("standard", 145).admitted
        assert not reg.admit_no_blocking("standard", 145).admitted
        reg.remove_tenant(reg.tenants[0].ident)
        assert reg.admit_no_blocking("standard", 145).admitted

    def test_negative_servers(self):
        with pytest.raises(ValueError):
            registry().admit_no_blocking("standard", -1)


class TestChernoffAdmission:
    def test_reference_capacity_admits(self):
        decision = registry().admit_chernoff("standard", 108)
        assert decision.admitted
        assert decision.bound_or_slack == pytest.approx(3.3636181e-3, rel=1e-5)

    def test_boundary_capacity(self):
        # 107 is the smallest capacity whose bound clears 0.01
        assert registry().admit_chernoff("standard", 107).admitted
        decision = registry().admit_chernoff("standard", 106)
        assert not decision.admitted
        assert decision.bound_or_slack > 0.01

    def test_rejection_leaves_registry_unchanged(self):
        reg = registry()
        reg.admit_chernoff("standard", 106)
        assert reg.tenants == ()

    def test_reproducible_bit_for_bit(self):
        a = registry().admit_chernoff("standard", 108)
        b = registry().admit_chernoff("standard", 108)
        assert a.bound_or_slack == b.bound_or_slack

    def test_null_candidate_keeps_bound(self):
        reg = registry()
        reg.add_tier(
            TierSpec(
                name="idle",
                curve=BurstinessCurve(((0.0, 0.0),)),
                s_max=1.4,
                demand={"slot": 1.0},
                model=MODEL,
            )
        )
        first = reg.admit_chernoff("standard", 108)
        second = reg.admit_chernoff("idle", 108)
        assert second.admitted
        assert second.bound_or_slack == first.bound_or_slack

    def test_heterogeneous_models_rejected(self):
        reg = registry()
        reg.add_tier(
            TierSpec(
                name="gamma",
                curve=token_bucket(3.0, 50.0),
                s_max=1.4,
                demand={"slot": 1.0},
                model=TruncatedGamma(shape=2.0, rate=3.0, s_max=1.4),
            )
        )
        assert reg.admit_chernoff("standard", 400).admitted
        with pytest.raises(ConfigurationError, match="multiclass"):
            reg.admit_chernoff("gamma", 400)

    def test_added_tenants_never_lower_bound(self):
        reg = registry()
        first = reg.admit_chernoff("standard", 250)
        second = reg.admit_chernoff("standard", 250)
        assert second.bound_or_slack >= first.bound_or_slack - 1e-15


class TestMulticlassAdmission:
    def test_single_server_matches_aggregate_rule(self):
        chern = registry().admit_chernoff("standard", 108)
        multi = registry().admit_multiclass("standard", {"slot": 108.0})
        assert multi.admitted == chern.admitted
        assert multi.bound_or_slack == pytest.approx(chern.bound_or_slack, rel=1e-8)
        assert multi.per_server_bounds == (multi.bound_or_slack,)

    def test_single_server_rejects_below_boundary(self):
        decision = registry().admit_multiclass("standard", {"slot": 106.0})
        assert not decision.admitted

    def test_even_split_matches_half_evaluations(self):
        servers = ({"slot": 80.0}, {"slot": 80.0})
        decision = registry().admit_multiclass(
            "standard", servers, weights=(0.5, 0.5)
        )
        half = TierSpec(
            name="standard",
            curve=CURVE.scaled(0.5),
            s_max=1.4,
            demand={"slot": 1.0},
            model=MODEL,
        )
        direct = multiclass_overflow({"slot": 80.0}, [half]).probability_bound
        assert decision.per_server_bounds == (direct, direct)
        assert decision.admitted == (direct <= 0.01)

    def test_default_weights_proportional_to_fit(self):
        reg = registry()
        reg.admit_multiclass("standard", ({"slot": 300.0}, {"slot": 100.0}))
        assert reg.tenants[0].weights == pytest.approx((0.75, 0.25))

    def test_no_room_anywhere(self):
        reg = registry()
        with pytest.raises(ConfigurationError):
            reg.admit_multiclass("standard", ({"cpu": 4.0},))

    def test_weight_validation(self):
        reg = registry()
        with pytest.raises(ValueError):
            reg.admit_multiclass("standard", ({"slot": 50.0},), weights=(0.7, 0.3))
        with pytest.raises(ValueError):
            reg.admit_multiclass(
                "standard",
                ({"slot": 50.0}, {"slot": 50.0}),
                weights=(0.7, 0.2),
            )

    def test_split_mismatch_detected(self):
        reg = registry()
        reg.admit_multiclass(
            "standard", ({"slot": 200.0}, {"slot": 200.0}), weights=(0.5, 0.5)
        )
        with pytest.raises(ConfigurationError):
            reg.admit_multiclass("standard", ({"slot": 200.0},))

    def test_rejection_keeps_registry(self):
        reg = registry()
        reg.admit_multiclass("standard", {"slot": 50.0})
        assert reg.tenants == ()


class TestMonotoneAdmission:
    def test_superset_never_flips_reject_to_admit(self):
        rng = np.random.default_rng(80)
        for _ in range(100):
            depth = float(rng.uniform(1.0, 15.0))
            rate = float(rng.uniform(20.0, 150.0))
            scale = float(rng.uniform(0.5, 1.2))
            cap = scale * float(rng.uniform(1.1, 1.6))
            model = TruncatedWeibull(
                scale=scale, shape=float(rng.uniform(2.0, 6.0)), s_max=cap
            )
            tier = TierSpec(
                name="t",
                curve=token_bucket(depth, rate),
                s_max=cap,
                demand={"slot": 1.0},
                model=model,
            )
            servers = int(rng.integers(5, 300))
            smaller = TenantRegistry(float(rng.uniform(1e-3, 0.1)))
            smaller.add_tier(tier)
            larger = TenantRegistry(smaller.epsilon)
            larger.add_tier(tier)
            for _ in range(int(rng.integers(0, 3))):
                smaller.admit_chernoff("t", 10**6)
                larger.admit_chernoff("t", 10**6)
            larger.admit_chernoff("t", 10**6)

            lean = smaller.admit_chernoff("t", servers)
            full = larger.admit_chernoff("t", servers)
            assert full.bound_or_slack >= lean.bound_or_slack - 1e-12
            if not lean.admitted:
                assert not full.admitted


class TestAgainstSimulator:
    def scenario(self, servers):
        return Scenario(
            arrival=greedy_trace(),
            regulator=CURVE,
            model=Empirical(samples=(1.4,)),
            servers=servers,
            horizon=5.0,
            warmup=0.0,
            seed=0,
        )

    def test_admitted_capacity_never_blocks(self):
        assert registry().admit_no_blocking("standard", 145).admitted
        assert run(self.scenario(145)).blocked_at_servers == 0

    def test_rejected_capacity_blocks_adversarially(self):
        assert not registry().admit_no_blocking("standard", 144).admitted
        assert run(self.scenario(144)).blocked_at_servers >= 1


def tier_with_demand(name, demand):
    return TierSpec(
        name=name, curve=CURVE, s_max=1.4, demand=demand, model=MODEL
    )


class TestAtomicFactors:
    def test_proportional_pair(self):
        tiers = [
            tier_with_demand("atom", {"cpu": 1.0, "mem": 2.0}),
            tier_with_demand("double", {"cpu": 2.0, "mem": 4.0}),
        ]
        assert atomic_factors(tiers) == pytest.approx([1.0, 2.0])

    def test_disproportional_pair(self):
        tiers = [
            tier_with_demand("atom", {"cpu": 1.0, "mem": 1.0}),
            tier_with_demand("skewed", {"cpu": 2.0, "mem": 3.0}),
        ]
        with pytest.raises(AtomicityError) as info:
            atomic_factors(tiers)
        assert info.value.tier == "skewed"
        assert set(info.value.resources) == {"cpu", "mem"}

    def test_memory_ladder(self):
        # memory in 128 MB steps with vCPU pinned at 2 per 3 GB
        def tier(steps):
            mem = 0.128 * steps
            return tier_with_demand(
                f"m{steps}", {"mem_gb": mem, "vcpu": mem * 2.0 / 3.0}
            )

        ladder = [tier(m) for m in (1, 2, 4, 8, 24)]
        assert atomic_factors(ladder) == pytest.approx(
            [1.0, 2.0, 4.0, 8.0, 24.0], rel=1e-12
        )

    def test_base_must_be_strictly_positive(self):
        tiers = [
            tier_with_demand("atom", {"cpu": 1.0, "mem": 0.0}),
            tier_with_demand("big", {"cpu": 2.0, "mem": 0.0}),
        ]
        with pytest.raises(ValueError):
            atomic_factors(tiers)

    def test_resource_set_must_match(self):
        tiers = [
            tier_with_demand("atom", {"cpu": 1.0}),
            tier_with_demand("other", {"gpu": 1.0}),
        ]
        with pytest.raises(ConfigurationError):
            atomic_factors(tiers)

    def test_bottleneck_share_scales_with_factor(self):
        rng = np.random.default_rng(81)
        for _ in range(50):
            base = {
                "a": float(rng.uniform(0.1, 4.0)),
                "b": float(rng.uniform(0.1, 4.0)),
                "c": float(rng.uniform(0.1, 4.0)),
            }
            kappa = float(rng.uniform(0.25, 8.0))
            scaled = {r: kappa * d for r, d in base.items()}
            tiers = [tier_with_demand("atom", base), tier_with_demand("big", scaled)]
            factors = atomic_factors(tiers)
            capacity = {r: float(rng.uniform(1.0, 50.0)) for r in base}
            base_share = max(d / capacity[r] for r, d in base.items())
            big_share = max(d / capacity[r] for r, d in scaled.items())
            assert big_share == pytest.approx(factors[1] * base_share, rel=1e-12)


class TestSplitDemand:
    def test_identity(self):
        assert split_demand(CURVE, (1.0,)) == [CURVE]

    def test_even_halves(self):
        halves = split_demand(CURVE, (0.5, 0.5))
        assert halves[0].pieces == ((2.5, 50.0),)
        assert halves[1].pieces == ((2.5, 50.0),)

    def test_zero_weight_gives_null_curve(self):
        parts = split_demand(CURVE, (1.0, 0.0))
        assert parts[1].value(10.0) == 0.0

    def test_parts_sum_to_whole(self):
        rng = np.random.default_rng(82)
        grid = np.linspace(0.0, 5.0, 100)
        for _ in range(50):
            raw = rng.uniform(0.0, 1.0, int(rng.integers(2, 6)))
            weights = raw / raw.sum()
            parts = split_demand(CURVE, weights)
            total = sum(np.asarray([p.value(t) for t in grid]) for p in parts)
            reference = np.asarray([CURVE.value(t) for t in grid])
            assert np.allclose(total, reference, atol=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            split_demand(CURVE, (0.5, 0.4))
        with pytest.raises(ValueError):
            split_demand(CURVE, (-0.5, 1.5))
        with pytest.raises(ValueError):
            split_demand(CURVE, ())


class TestPersistence:
    def test_round_trip_preserves_decisions(self):
        reg = registry(epsilon=0.02)
        reg.add_tier(
            TierSpec(
                name="burst",
                curve=token_bucket(8.0, 40.0),
                s_max=1.4,
                demand={"slot": 2.0},
                model=MODEL,
            )
        )
        reg.admit_no_blocking("standard", 1000)
        reg.admit_multiclass("burst", {"slot": 500.0})
        revived = TenantRegistry.from_config(json.loads(json.dumps(reg.to_config())))
        assert revived.epsilon == reg.epsilon
        assert revived.tenants == reg.tenants
        assert [t.name for t in revived.tiers] == [t.name for t in reg.tiers]
        a = reg.admit_chernoff("standard", 400)
        b = revived.admit_chernoff("standard", 400)
        assert a == b

    def test_ident_counter_survives(self):
        reg = registry()
        reg.admit_no_blocking("standard", 1000)
        reg.remove_tenant(reg.tenants[0].ident)
        revived = TenantRegistry.from_config(reg.to_config())
        revived.admit_no_blocking("standard", 1000)
        assert revived.tenants[0].ident == 2
