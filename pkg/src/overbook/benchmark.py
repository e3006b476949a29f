"""Built-in reference workload.

A batch-arrival service contracted to the curve 5 + 100t, with holding
times drawn from a Weibull capped at 1.4.  Batches of 5 arrive every
0.05 time units (deterministic variant) or at Poisson epochs with the
same mean rate.  The CLI presets and the acceptance checks build on
these constructors so the constants live in exactly one place.
"""

from __future__ import annotations

import numpy as np

from .bounds import TierSpec
from .curves import BurstinessCurve, token_bucket
from .service_time import TruncatedWeibull
from .simulator import (
    DEFAULT_HORIZON,
    DEFAULT_WARMUP,
    DeterministicBatch,
    PoissonBatch,
    Scenario,
    Trace,
)

__all__ = [
    "BATCH",
    "EPOCH_RATE",
    "PERIOD",
    "adversarial_trace",
    "deterministic_scenario",
    "poisson_scenario",
    "reference_curve",
    "reference_model",
    "reference_tier",
]

BATCH = 5
PERIOD = 0.05
EPOCH_RATE = 20.0  # batches per time unit; 100 requests/s offered either way


def reference_curve() -> BurstinessCurve:
    return token_bucket(5.0, 100.0)


def reference_model() -> TruncatedWeibull:
    return TruncatedWeibull(scale=1.0, shape=5.0, s_max=1.4)


def reference_tier(name: str = "standard") -> TierSpec:
    return TierSpec(
        name=name,
        curve=reference_curve(),
        s_max=1.4,
        demand={"slot": 1.0},
        model=reference_model(),
    )


def _scenario(arrival, servers, horizon, warmup, seed) -> Scenario:
    return Scenario(
        arrival=arrival,
        regulator=reference_curve(),
        model=reference_model(),
        servers=servers,
        horizon=horizon,
        warmup=warmup,
        seed=seed,
    )


def deterministic_scenario(
    servers: int | None = None,
    horizon: float = DEFAULT_HORIZON,
    warmup: float = DEFAULT_WARMUP,
    seed: int = 0,
) -> Scenario:
    return _scenario(DeterministicBatch(PERIOD, BATCH), servers, horizon, warmup, seed)


def poisson_scenario(
    servers: int | None = None,
    horizon: float = DEFAULT_HORIZON,
    warmup: float = DEFAULT_WARMUP,
    seed: int = 0,
) -> Scenario:
    return _scenario(PoissonBatch(EPOCH_RATE, BATCH), servers, horizon, warmup, seed)


def adversarial_trace() -> Trace:
    """Worst-case conformant arrivals: an opening batch of 5 then one
    request per bucket refill, driving occupancy to the full curve value
    145 at t = 1.4 when every holding time equals the cap."""
    times = np.arange(141) / 100.0
    counts = np.concatenate(([5], np.ones(140, dtype=np.int64)))
    return Trace(tuple(zip(times.tolist(), (int(c) for c in counts))))
