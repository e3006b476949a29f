"""Acceptance gate: one test per release criterion, each printing a
single PASS/FAIL line (run with -s or -v to see them all)."""

from __future__ import annotations

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from overbook import benchmark
from overbook.bounds import (
    TierSpec,
    chernoff_tail,
    log_mgf,
    mean_envelope_load,
    min_servers,
    multiclass_overflow,
)
from overbook.bounds import _MgfEvaluator
from overbook.estimator import VirtualQueueBank
from overbook.simulator import (
    Scenario,
    Trace,
    min_servers_simulated,
    run,
)

CURVE = benchmark.reference_curve()
MODEL = benchmark.reference_model()
MEAN_SERVICE = 0.915


def report(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


class TestCriterion1:
    def test_capacity_table(self):
        start = time.perf_counter()
        chern = min_servers(CURVE, MODEL, 0.01, method="chernoff")
        certain = min_servers(CURVE, MODEL, 0.01, method="no_blocking")
        det_sim = min_servers_simulated(benchmark.deterministic_scenario(seed=0), 0.01)
        poi_sim = min_servers_simulated(benchmark.poisson_scenario(seed=0), 0.01)
        elapsed = time.perf_counter() - start
        ok = (
            abs(det_sim - 100) <= 2
            and abs(poi_sim - 92) <= 3
            and abs(chern - 108) <= 1
            and certain == 145
            and elapsed < 60.0
        )
        report(
            1,
            ok,
            f"simulated det={det_sim} poisson={poi_sim}, chernoff={chern}, "
            f"no_blocking={certain}, runtime={elapsed:.1f}s",
        )


class TestCriterion2:
    def test_tail_below_bound_everywhere(self, det_reps, poisson_reps):
        worst = -math.inf
        for reps in (det_reps, poisson_reps):
            omega = np.array(
                [
                    chernoff_tail(CURVE, MODEL, k).probability_bound
                    for k in reps.capacities
                ]
            )
            margin = reps.tail_mean - (omega + 3.0 * reps.tail_se)
            worst = max(worst, float(margin.max()))
        ok = worst <= 0.0
        report(2, ok, f"max(tail - omega - 3se) = {worst:.3e}; "
                      f"mean_q poisson={poisson_reps.mean_q:.2f} det={det_reps.mean_q:.2f}")

    def test_summary_means(self, det_reps, poisson_reps):
        ok = abs(poisson_reps.mean_q - 71.0) <= 1.5 and abs(det_reps.mean_q - 92.0) <= 1.0
        report(
            2,
            ok,
            f"E Q poisson={poisson_reps.mean_q:.2f} (71 +- 1.5), "
            f"det={det_reps.mean_q:.2f} (92 +- 1)",
        )


class TestCriterion3:
    def test_admitted_batch_statistics(self, poisson_full):
        batch = poisson_full.avg_admitted_batch
        rate = poisson_full.admitted_rate
        little_gap = abs(poisson_full.mean_q - rate * MEAN_SERVICE) / poisson_full.mean_q
        ok = abs(batch - 3.9) <= 0.1 and abs(rate - 78.0) <= 2.0 and little_gap <= 0.02
        report(
            3,
            ok,
            f"batch={batch:.3f} (3.9 +- 0.1), rate={rate:.2f} (78 +- 2), "
            f"Little gap={little_gap:.3%} (<= 2%)",
        )


class TestCriterion4:
    def test_mgf_domination(self, det_reps):
        details = []
        ok = True
        for theta in (0.05, 0.1, 0.2):
            bound = math.exp(log_mgf(CURVE, MODEL, theta))
            per_rep = []
            for i in range(10):
                stats = run(benchmark.deterministic_scenario(seed=i))
                k = np.arange(stats.histogram.size)
                per_rep.append(float(stats.histogram @ np.exp(theta * k)))
            mean = float(np.mean(per_rep))
            se = float(np.std(per_rep, ddof=1) / math.sqrt(len(per_rep)))
            ok = ok and mean <= bound + 3.0 * se
            details.append(f"theta={theta}: mc={mean:.4g} <= bound={bound:.4g}")
        report(4, ok, "; ".join(details))


class TestCriterion5:
    def test_markov_capacity(self):
        k = min_servers(CURVE, MODEL, 0.01, method="markov")
        mean_load = mean_envelope_load(CURVE, MODEL)
        ok = abs(k - 9650) <= 5 and k > 145 and abs(mean_load - 96.5) <= 0.1
        report(
            5,
            ok,
            f"markov min_servers={k} (stated 9650 +- 5; equals "
            f"ceil(mean_load/eps) = ceil({mean_load:.6f}/0.01) = {math.ceil(mean_load / 0.01)})",
        )


class TestCriterion6:
    def test_no_blocking_capacity_never_blocks(self):
        det = run(benchmark.deterministic_scenario(servers=145, seed=0))
        poi = run(benchmark.poisson_scenario(servers=145, seed=0))
        adversarial = Scenario(
            arrival=benchmark.adversarial_trace(),
            regulator=CURVE,
            model=_unit_point_mass(),
            servers=144,
            horizon=5.0,
            warmup=0.0,
            seed=0,
        )
        blocked_at_144 = run(adversarial).blocked_at_servers
        ok = (
            det.blocked_at_servers == 0
            and poi.blocked_at_servers == 0
            and blocked_at_144 >= 1
        )
        report(
            6,
            ok,
            f"K=145 blocked: det={det.blocked_at_servers} poisson={poi.blocked_at_servers}; "
            f"K=144 adversarial blocked={blocked_at_144}",
        )


def _unit_point_mass():
    from overbook.service_time import Empirical

    return Empirical(samples=(1.4,))


class TestCriterion7:
    def test_multiclass_reduces_to_aggregate(self):
        worst = 0.0
        for servers in (100, 108, 120):
            tier = TierSpec(
                name="only",
                curve=CURVE,
                s_max=1.4,
                demand={"slot": 1.0 / servers},
                model=MODEL,
            )
            multi = multiclass_overflow({"slot": 1.0}, [tier]).probability_bound
            single = chernoff_tail(CURVE, MODEL, servers).probability_bound
            worst = max(worst, abs(multi - single) / single)
        ok = worst <= 1e-8
        report(7, ok, f"max relative gap over K in (100, 108, 120): {worst:.2e}")


class TestCriterion8:
    def test_virtual_queue_exactness(self):
        from test_estimator import brute_backlogs, dyadic_rates, dyadic_trace

        rng = np.random.default_rng(2024)
        exact = True
        for _ in range(100):
            times, counts = dyadic_trace(rng, int(rng.integers(50, 1001)))
            rates = dyadic_rates(rng)
            bank = VirtualQueueBank(rates, delta=0.1, sample_dt=1.0)
            for i, (t, c) in enumerate(zip(times, counts)):
                bank.observe(float(t), int(c))
                expected = brute_backlogs(times, counts, rates, i)
                exact = exact and np.array_equal(bank.backlogs, expected)
        report(8, exact, "Lindley backlog == brute-force sup at every epoch "
                         "(100 traces x 8 rates, dyadic inputs)")


class TestCriterion9:
    def test_quadrature_and_bound_extremes(self):
        deltas = []
        for theta in (0.05, 0.2, 0.5, 1.0):
            ev = _MgfEvaluator(CURVE, MODEL)
            value = ev.log_mgf(theta)
            deltas.append(ev.last_delta / max(1.0, abs(value)))
        converged = max(deltas) < 1e-8

        zero_above = all(
            chernoff_tail(CURVE, MODEL, k).probability_bound == 0.0
            for k in (145, 146, 150, 200, 1000)
        )
        one_below = all(
            chernoff_tail(CURVE, MODEL, k).probability_bound == 1.0
            for k in (1, 10, 50, 90, 96)
        )
        ok = converged and zero_above and one_below
        report(
            9,
            ok,
            f"halving delta max={max(deltas):.2e} (<1e-8); omega==0 for K>=145: "
            f"{zero_above}; omega==1 for K<=96: {one_below}",
        )


class TestCriterion10:
    def test_property_suites(self):
        nodes = [
            "tests/test_curves.py::TestProperties::test_concavity_sampled",
            "tests/test_curves.py::TestProperties::test_conformance_of_regulated_traces",
            "tests/test_curves.py::TestProperties::test_round_trip_sampled",
            "tests/test_service_time.py::TestProperties::test_ccdf_shape_invariants",
            "tests/test_estimator.py::TestQuotaHeadroom::test_convergence_property",
            "tests/test_estimator.py::TestIsotonic::test_properties",
        ]
        proc = subprocess.run(
            [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *nodes],
            cwd=Path(__file__).resolve().parent.parent,
            capture_output=True,
            text=True,
        )
        ok = proc.returncode == 0
        report(10, ok, f"{len(nodes)} property suites, 10^3 cases each: "
                       f"exit={proc.returncode}")
