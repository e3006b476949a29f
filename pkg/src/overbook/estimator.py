"""Online burstiness and headroom estimation from observed streams.

VirtualQueueBank tracks, for a grid of drain rates, the backlog a
fictitious fixed-rate server would accumulate if fed the observed
request stream.  Quantiles of those backlogs give an empirical arrival
envelope.  QuotaHeadroom keeps exponentially weighted moments of an
occupancy stream and turns them into a conservative spare-capacity
figure.

Both are single-writer state machines: interleave snapshot reads with
updates, never run them concurrently.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .curves import BurstinessCurve, ClockRegressionError

__all__ = [
    "EstimatorStateError",
    "QuotaHeadroom",
    "VirtualQueueBank",
    "isotonic_nonincreasing",
]

DEFAULT_RATE_COUNT = 32
DEFAULT_RATE_SPAN = 100.0
DEFAULT_MAX_SAMPLES = 50_000
_GAPS_FOR_RESOLUTION = 10


class EstimatorStateError(RuntimeError):
    """Raised when a query needs state the estimator has not built yet."""


def isotonic_nonincreasing(values: Sequence[float]) -> np.ndarray:
    """Smallest pointwise-dominating sequence that never increases.

    A max-scan from the right: entry i becomes the maximum of the input
    from i onward.  Used to repair quantile noise before building a
    concave envelope, where offsets must not grow with the rate.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("need a nonempty 1-d sequence")
    return np.maximum.accumulate(arr[::-1])[::-1]


class VirtualQueueBank:
    """Per-rate Lindley backlogs of the observed arrival stream.

    For each rate r the bank maintains V_r, the backlog of a virtual
    server draining at rate r, updated on every arrival batch.  Between
    arrivals the backlog path is sampled on a uniform time grid so
    later quantiles are time-weighted; the pre-arrival trough and the
    post-arrival peak are recorded as well.  When no resolution is
    given, the grid step is fixed at a tenth of the mean gap over the
    first ten inter-arrival gaps.

    The reservoir is capped: once ``max_samples`` grid rows exist,
    every other row is dropped and the grid step doubles.
    """

    def __init__(
        self,
        rates: Sequence[float],
        delta: float,
        sample_dt: float | None = None,
        max_samples: int = DEFAULT_MAX_SAMPLES,
    ) -> None:
        grid = np.asarray(rates, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ValueError("need at least one rate")
        if not np.all(np.isfinite(grid)) or np.any(grid <= 0.0):
            raise ValueError("rates must be positive and finite")
        if np.any(np.diff(grid) <= 0.0):
            raise ValueError("rates must be strictly increasing")
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if sample_dt is not None and not sample_dt > 0.0:
            raise ValueError("sample_dt must be positive")
        if max_samples < 2:
            raise ValueError("max_samples must be >= 2")
        self.rates = grid
        self.delta = float(delta)
        self.max_samples = int(max_samples)
        self._v = np.zeros(grid.size)
        self._clock = 0.0
        self.total_arrivals = 0
        self._dt = float(sample_dt) if sample_dt is not None else None
        self._grid_next: float | None = None
        self._first_time: float | None = None
        self._n_epochs = 0
        self._grid_rows: list[np.ndarray] = []
        self._event_rows: list[np.ndarray] = []

    @classmethod
    def geometric(
        cls,
        peak_rate: float,
        delta: float,
        n_rates: int = DEFAULT_RATE_COUNT,
        span: float = DEFAULT_RATE_SPAN,
        **kwargs,
    ) -> "VirtualQueueBank":
        """Bank over a geometric rate grid from peak_rate/span up to
        peak_rate."""
        if not (math.isfinite(peak_rate) and peak_rate > 0.0):
            raise ValueError("peak rate must be positive and finite")
        if n_rates < 1 or span <= 1.0:
            raise ValueError("need n_rates >= 1 and span > 1")
        if n_rates == 1:
            rates = np.array([peak_rate])
        else:
            rates = np.geomspace(peak_rate / span, peak_rate, n_rates)
        return cls(rates, delta, **kwargs)

    @property
    def backlogs(self) -> np.ndarray:
        return self._v.copy()

    @property
    def clock(self) -> float:
        return self._clock

    def peek(self, t: float) -> np.ndarray:
        """Backlogs drained forward to time ``t`` without recording."""
        if t < self._clock:
            raise ClockRegressionError(
                f"peek at {t} precedes estimator clock {self._clock}"
            )
        return self._drained(float(t) - self._clock)

    def _drained(self, elapsed: float) -> np.ndarray:
        return np.maximum(0.0, self._v - self.rates * elapsed)

    def _thin(self) -> None:
        if len(self._grid_rows) >= self.max_samples and self._dt is not None:
            self._grid_rows = self._grid_rows[::2]
            self._dt *= 2.0

    def observe(self, t: float, count: int) -> None:
        """Feed one arrival batch: ``count`` requests at time ``t``."""
        t = float(t)
        if not math.isfinite(t):
            raise ValueError("timestamp must be finite")
        if t < self._clock:
            raise ClockRegressionError(
                f"update at {t} precedes estimator clock {self._clock}"
            )
        if count < 1 or count != int(count):
            raise ValueError("count must be a positive integer")

        if self._dt is not None:
            if self._grid_next is None:
                self._grid_next = self._clock + self._dt
            while self._grid_next < t:
                self._grid_rows.append(self._drained(self._grid_next - self._clock))
                self._grid_next += self._dt
                self._thin()

        trough = self._drained(t - self._clock)
        self._event_rows.append(trough)
        self._v = trough + count
        self._event_rows.append(self._v.copy())
        self._clock = t
        self.total_arrivals += int(count)

        if self._dt is None:
            if self._first_time is None:
                self._first_time = t
            self._n_epochs += 1
            if self._n_epochs == _GAPS_FOR_RESOLUTION + 1:
                span = t - self._first_time
                if span > 0.0:
                    self._dt = span / (10.0 * _GAPS_FOR_RESOLUTION)
                    self._grid_next = t + self._dt

    def _samples(self) -> np.ndarray:
        rows = self._grid_rows + self._event_rows
        if not rows:
            raise EstimatorStateError("no samples recorded yet")
        return np.vstack(rows)

    def _rate_index(self, r: float) -> int:
        idx = int(np.argmin(np.abs(self.rates - r)))
        if not math.isclose(self.rates[idx], r, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"rate {r} is not on the grid")
        return idx

    def empirical_sigma(self, r: float) -> float:
        """Smallest recorded backlog level exceeded less than a delta
        fraction of the sampled time, for grid rate ``r``."""
        column = np.sort(self._samples()[:, self._rate_index(r)])
        n = column.size
        allowed = max(0, math.ceil(self.delta * n) - 1)
        return float(column[n - 1 - allowed])

    def empirical_curve(self) -> BurstinessCurve:
        """Envelope min_r (sigma_r + r t) from the per-rate quantiles,
        with the offsets forced nonincreasing in the rate first."""
        samples = self._samples()
        n = samples.shape[0]
        allowed = max(0, math.ceil(self.delta * n) - 1)
        ordered = np.sort(samples, axis=0)
        sigmas = isotonic_nonincreasing(ordered[n - 1 - allowed, :])
        pieces = tuple(
            (float(s), float(r)) for s, r in zip(sigmas, self.rates)
        )
        return BurstinessCurve(pieces)

    def coverage(self) -> float:
        """Fraction of recorded (sample, rate) cells at or below the
        per-rate quantile offsets.  At least 1 - delta by construction."""
        samples = self._samples()
        sigma = np.array([self.empirical_sigma(r) for r in self.rates])
        return float(np.mean(samples <= sigma))

    def to_config(self) -> dict:
        return {
            "rates": [float(r) for r in self.rates],
            "delta": self.delta,
            "sample_dt": self._dt,
            "max_samples": self.max_samples,
            "clock": self._clock,
            "total_arrivals": self.total_arrivals,
            "backlogs": [float(v) for v in self._v],
            "grid_next": self._grid_next,
            "first_time": self._first_time,
            "n_epochs": self._n_epochs,
            "grid_rows": [[float(x) for x in row] for row in self._grid_rows],
            "event_rows": [[float(x) for x in row] for row in self._event_rows],
        }

    @classmethod
    def from_config(cls, config: dict) -> "VirtualQueueBank":
        bank = cls(
            config["rates"],
            config["delta"],
            sample_dt=config.get("sample_dt"),
            max_samples=config.get("max_samples", DEFAULT_MAX_SAMPLES),
        )
        bank._clock = float(config["clock"])
        bank.total_arrivals = int(config["total_arrivals"])
        bank._v = np.asarray(config["backlogs"], dtype=float)
        if bank._v.shape != bank.rates.shape:
            raise ValueError("backlog vector does not match the rate grid")
        bank._grid_next = config.get("grid_next")
        bank._first_time = config.get("first_time")
        bank._n_epochs = int(config.get("n_epochs", 0))
        bank._grid_rows = [np.asarray(r, dtype=float) for r in config["grid_rows"]]
        bank._event_rows = [np.asarray(r, dtype=float) for r in config["event_rows"]]
        return bank


class QuotaHeadroom:
    """EWMA occupancy moments and the spare capacity they imply.

    update() folds one occupancy observation into exponentially
    weighted mean and variance; headroom(K) is the capacity left after
    subtracting the mean plus three standard deviations, floored at 0.
    """

    def __init__(self, alpha: float) -> None:
        if not 0.0 < alpha < 1.0:
            raise ValueError("forgetting factor must lie in (0, 1)")
        self.alpha = float(alpha)
        self.ewma_mean = 0.0
        self.ewma_var = 0.0
        self._seen = False

    def update(self, q_observed: float) -> None:
        q = float(q_observed)
        if not (math.isfinite(q) and q >= 0.0):
            raise ValueError("occupancy observation must be finite and >= 0")
        if not self._seen:
            self.ewma_mean = q
            self.ewma_var = 0.0
            self._seen = True
            return
        a = self.alpha
        self.ewma_mean = a * self.ewma_mean + (1.0 - a) * q
        gap = q - self.ewma_mean
        self.ewma_var = a * self.ewma_var + (1.0 - a) * gap * gap

    def headroom(self, servers: int) -> int:
        if not self._seen:
            raise EstimatorStateError("no occupancy observed yet")
        spare = servers - self.ewma_mean - 3.0 * math.sqrt(self.ewma_var)
        return max(0, int(math.floor(spare)))
