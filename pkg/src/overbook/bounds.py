"""Analytic capacity planning: occupancy tail bounds and server counts.

Everything here is closed-form or quadrature, no simulation.  The central
object is the log moment generating function of the stationary occupancy
surrogate, evaluated by composite quadrature over the envelope's range and
shared across a capacity search so the integrand logs are computed once.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .curves import BurstinessCurve
from .service_time import ServiceTimeModel

__all__ = [
    "BoundResult",
    "BracketingError",
    "NoBlockingResult",
    "ResourcePool",
    "TierSpec",
    "capacity_servers",
    "chernoff_tail",
    "erlang_b",
    "log_mgf",
    "markov_tail",
    "mean_envelope_load",
    "min_servers",
    "multiclass_overflow",
    "no_blocking",
]

_REL_TOL = 1e-9
_TILT_TOL = 1e-10
_CEIL_EPS = 1e-9
_MAX_LEVEL = 18


class BracketingError(RuntimeError):
    """Tilt optimizer could not bracket the stationary point."""

    def __init__(self, message: str, tilt: float, derivative: float) -> None:
        super().__init__(f"{message} (tilt={tilt:g}, derivative={derivative:g})")
        self.tilt = tilt
        self.derivative = derivative


@dataclass(frozen=True)
class BoundResult:
    """Tail bound with the optimizing tilt and quadrature diagnostics."""

    probability_bound: float
    optimal_tilt: float
    exponent: float
    grid_size: int
    quadrature_error: float


class NoBlockingResult(NamedTuple):
    required: int
    ok: bool


@dataclass(frozen=True)
class ResourcePool:
    """Physical servers, each a mapping of resource name to capacity."""

    servers: tuple[Mapping[str, float], ...]

    def __init__(self, servers: Iterable[Mapping[str, float]]) -> None:
        frozen = tuple(dict(s) for s in servers)
        if not frozen:
            raise ValueError("pool needs at least one server")
        keys = set(frozen[0])
        for server in frozen:
            if set(server) != keys:
                raise ValueError("every server must list the same resource types")
            for name, cap in server.items():
                if not (math.isfinite(cap) and cap >= 0.0):
                    raise ValueError(f"capacity for {name!r} must be finite and >= 0")
        object.__setattr__(self, "servers", frozen)


@dataclass(frozen=True)
class TierSpec:
    """A service tier: envelope, holding-time cap, per-request demand, model."""

    name: str
    curve: BurstinessCurve
    s_max: float
    demand: Mapping[str, float]
    model: ServiceTimeModel

    def __post_init__(self):
        if not (math.isfinite(self.s_max) and self.s_max > 0.0):
            raise ValueError("s_max must be a positive finite time")
        if self.model.s_max > self.s_max + 1e-12:
            raise ValueError("model support exceeds the tier's holding-time cap")
        demand = dict(self.demand)
        if any(not (math.isfinite(v) and v >= 0.0) for v in demand.values()):
            raise ValueError("demand entries must be finite and >= 0")
        if not any(v > 0.0 for v in demand.values()):
            raise ValueError("demand must be positive in at least one resource")
        object.__setattr__(self, "demand", demand)


def capacity_servers(pool: ResourcePool, demand: Mapping[str, float]) -> int:
    """Whole servers' worth of capacity: sum over servers of the
    bottleneck resource's floor(capacity / demand)."""
    positive = {r: d for r, d in demand.items() if d > 0.0}
    if not positive:
        raise ValueError("demand vector has no positive entry")
    total = 0
    for server in pool.servers:
        fits = []
        for resource, per_request in positive.items():
            if resource not in server:
                raise ValueError(f"server lacks resource {resource!r}")
            fits.append(math.floor(server[resource] / per_request + _CEIL_EPS))
        total += min(fits)
    return total


def no_blocking(
    tiers: Sequence[tuple[TierSpec, int]], servers: int
) -> NoBlockingResult:
    """Capacity that guarantees zero blocking, and whether ``servers`` meets it.

    Each tenant can hold at most its envelope evaluated at the holding-time
    cap simultaneously, so the certain-sufficiency level is the sum of
    those peaks over all tenants.
    """
    if servers < 0:
        raise ValueError("server count must be >= 0")
    total = 0.0
    for tier, count in tiers:
        if count < 0:
            raise ValueError("tenant count must be >= 0")
        total += count * tier.curve.value(tier.s_max)
    required = math.ceil(total - _CEIL_EPS) if total > 0.0 else 0
    return NoBlockingResult(required=required, ok=required <= servers)


class _MgfEvaluator:
    """Quadrature engine for one (curve, model) pair.

    Node positions and the tilt-independent log tail values are cached per
    refinement level, so a capacity search pays the model-evaluation cost
    once.  The value integrand uses composite Simpson for continuous models
    and midpoint panels when the model has atoms (the integrand is then
    piecewise constant between atom images).  The slope integrand always
    uses midpoint panels: it saturates toward an indicator as the tilt
    grows, and endpoint nodes (where the tail is exactly zero) would pin
    the computed slope below its true limit.
    """

    def __init__(self, curve: BurstinessCurve, model: ServiceTimeModel) -> None:
        self.curve = curve
        self.model = model
        self.low = float(curve.value(0.0))
        self.high = float(curve.value(model.s_max))
        self.use_midpoint = bool(model.atoms())
        anchors = {self.low, self.high}
        for t in curve.breakpoints:
            if 0.0 < t < model.s_max:
                anchors.add(float(curve.value(t)))
        for a in model.atoms():
            if 0.0 < a < model.s_max:
                anchors.add(float(curve.value(a)))
        self.anchors = np.array(sorted(anchors))
        self._levels: dict[tuple[bool, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.grid_size = 0
        self.last_delta = 0.0
        self.positive_high = self._positive_high()

    def _positive_high(self) -> float:
        """Largest envelope value carrying positive tail mass in floats.

        A parent survival function can underflow to zero strictly inside
        the support; beyond its image the integrands vanish identically
        and no finite tilt can cross a threshold there.
        """
        lo, hi = 0.0, self.model.s_max
        if self.model.ccdf(lo) <= 0.0:
            return self.low
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if self.model.ccdf(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        return float(self.curve.value(lo))

    def _tail_at(self, x: np.ndarray) -> np.ndarray:
        t = np.asarray(self.curve.inverse(x))
        finite = np.isfinite(t)
        return np.where(finite, self.model.ccdf(np.where(finite, t, 0.0)), 0.0)

    def _nodes(self, level: int, midpoint: bool):
        cached = self._levels.get((midpoint, level))
        if cached is not None:
            return cached
        panels = 4 * (1 << level)
        xs_parts = []
        w_parts = []
        for a, b in zip(self.anchors[:-1], self.anchors[1:]):
            h = (b - a) / panels
            if midpoint:
                xs = a + h * (np.arange(panels) + 0.5)
                w = np.full(panels, h)
            else:
                xs = a + h * np.arange(panels + 1)
                w = np.full(panels + 1, h / 3.0)
                w[1:-1:2] *= 4.0
                w[2:-1:2] *= 2.0
            xs_parts.append(xs)
            w_parts.append(w)
        xs = np.concatenate(xs_parts) if xs_parts else np.empty(0)
        weights = np.concatenate(w_parts) if w_parts else np.empty(0)
        tail = self._tail_at(xs)
        with np.errstate(divide="ignore"):
            log_tail = np.log(tail)
            log_rest = np.log1p(-tail)
        entry = (weights, log_tail, log_rest)
        self._levels[(midpoint, level)] = entry
        self.grid_size = max(self.grid_size, int(weights.size))
        return entry

    def _refine(self, integral, label: str, floor: float = 0.0) -> float:
        prev = integral(0)
        for level in range(1, _MAX_LEVEL + 1):
            cur = integral(level)
            delta = abs(cur - prev)
            if delta < max(_REL_TOL * max(1.0, abs(cur)), floor):
                self.last_delta = delta
                return cur
            prev = cur
        raise RuntimeError(f"{label} quadrature failed to converge")

    def log_mgf(self, tilt: float) -> float:
        if tilt < 0.0:
            raise ValueError("tilt must be >= 0")
        if tilt == 0.0 or self.high <= self.low:
            return tilt * self.low if self.high <= self.low else 0.0

        def integral(level: int) -> float:
            weights, log_tail, log_rest = self._nodes(level, self.use_midpoint)
            return float(weights @ np.logaddexp(log_tail + tilt, log_rest))

        return tilt * self.low + self._refine(integral, "log-MGF")

    def derivative(self, tilt: float) -> float:
        """Slope of the log MGF; at zero tilt this is the mean envelope load.

        The slope steers sign decisions in the tilt bisection, so its
        refinement carries an absolute floor: at large tilt the integrand
        develops a boundary layer near the upper envelope value that
        uniform grids resolve only logarithmically, and chasing it buys
        nothing for root bracketing.
        """
        if self.high <= self.low:
            return self.low

        def integral(level: int) -> float:
            weights, log_tail, log_rest = self._nodes(level, True)
            return float(weights @ expit(tilt + log_tail - log_rest))

        floor = 1e-6 * (self.high - self.low) if tilt > 0.0 else 0.0
        return self.low + self._refine(integral, "log-MGF slope", floor)

    def mean_load(self) -> float:
        return self.derivative(0.0)


def log_mgf(curve: BurstinessCurve, model: ServiceTimeModel, tilt: float) -> float:
    """Log moment generating function of the envelope load at the given
    exponential tilt.  Zero tilt gives exactly zero."""
    return _MgfEvaluator(curve, model).log_mgf(tilt)


def mean_envelope_load(curve: BurstinessCurve, model: ServiceTimeModel) -> float:
    """Expected envelope load: curve(0) plus the integrated tail."""
    return _MgfEvaluator(curve, model).mean_load()


def _optimize_tilt(exponent_slope, lo: float = 1e-8, hi: float = 1.0) -> float:
    """Largest-exponent tilt by bisection on the monotone slope.

    ``exponent_slope(t)`` must be positive at small t and eventually
    negative; concavity of the exponent makes the sign change unique.
    """
    if exponent_slope(lo) <= 0.0:
        lo, hi = 0.0, lo
    else:
        while exponent_slope(hi) > 0.0:
            lo, hi = hi, 2.0 * hi
            if hi > 1e15:
                raise BracketingError(
                    "exponent slope never changed sign", hi, exponent_slope(hi)
                )
    while hi - lo > _TILT_TOL:
        mid = 0.5 * (lo + hi)
        if exponent_slope(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _result(probability: float, tilt: float, exponent: float, ev=None) -> BoundResult:
    grid = 0 if ev is None else ev.grid_size
    err = 0.0 if ev is None else ev.last_delta
    return BoundResult(
        probability_bound=probability,
        optimal_tilt=tilt,
        exponent=exponent,
        grid_size=grid,
        quadrature_error=err,
    )


def _chernoff_from_evaluator(ev: _MgfEvaluator, servers: float) -> BoundResult:
    if servers < 0:
        raise ValueError("server count must be >= 0")
    margin = _CEIL_EPS + 1e-6 * (ev.high - ev.low)
    if servers >= ev.positive_high - margin:
        return _result(0.0, math.inf, math.inf, ev)
    if servers <= ev.mean_load():
        return _result(1.0, 0.0, 0.0, ev)
    tilt = _optimize_tilt(lambda t: servers - ev.derivative(t))
    exponent = max(0.0, tilt * servers - ev.log_mgf(tilt))
    return _result(min(1.0, math.exp(-exponent)), tilt, exponent, ev)


def chernoff_tail(
    curve: BurstinessCurve, model: ServiceTimeModel, servers: float
) -> BoundResult:
    """Optimized exponential-moment bound on P(occupancy > servers)."""
    return _chernoff_from_evaluator(_MgfEvaluator(curve, model), servers)


def markov_tail(
    curve: BurstinessCurve, model: ServiceTimeModel, servers: float
) -> float:
    """First-moment bound min(1, mean load / servers); needs no independence
    across requests, so it stays valid under correlated tenants."""
    if servers <= 0:
        raise ValueError("server count must be > 0")
    return min(1.0, mean_envelope_load(curve, model) / servers)


def min_servers(
    curve: BurstinessCurve,
    model: ServiceTimeModel,
    epsilon: float,
    method: str = "chernoff",
) -> int:
    """Smallest integer capacity whose bound is at most epsilon."""
    if method == "no_blocking":
        return math.ceil(curve.value(model.s_max) - _CEIL_EPS)
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if method == "chernoff":
        ev = _MgfEvaluator(curve, model)

        def ok(k: int) -> bool:
            return _chernoff_from_evaluator(ev, k).probability_bound <= epsilon

    elif method == "markov":
        mean = mean_envelope_load(curve, model)

        def ok(k: int) -> bool:
            return mean / k <= epsilon

    else:
        raise ValueError(f"unknown method {method!r}")
    k = 1
    while not ok(k):
        k *= 2
        if k > 1 << 60:
            raise RuntimeError("capacity search diverged")
    lo, hi = k // 2, k  # ok(hi) holds; ok(lo) fails (or lo == 0)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def multiclass_overflow(
    server_capacity: Mapping[str, float], tiers: Sequence[TierSpec]
) -> BoundResult:
    """Bound on one server overflowing any resource with tiers packed
    fractionally: each tier's log MGF enters scaled by its bottleneck
    share of the server, and the threshold is the whole server."""
    shares = []
    evaluators = []
    peak = 0.0
    for tier in tiers:
        worst = 0.0
        for resource, per_request in tier.demand.items():
            if per_request <= 0.0 or resource not in server_capacity:
                continue
            cap = server_capacity[resource]
            if cap <= 0.0:
                raise ValueError(f"server has zero capacity for {resource!r}")
            worst = max(worst, per_request / cap)
        if worst == 0.0:
            warnings.warn(
                f"tier {tier.name!r} demands none of this server's resources",
                stacklevel=2,
            )
            continue
        shares.append(worst)
        evaluators.append(_MgfEvaluator(tier.curve, tier.model))
        peak += worst * tier.curve.value(tier.s_max)
    if not shares:
        return _result(0.0, math.inf, math.inf)
    reachable = sum(s * ev.positive_high for s, ev in zip(shares, evaluators))
    margin = 1e-12 + 1e-6 * sum(
        s * (ev.high - ev.low) for s, ev in zip(shares, evaluators)
    )
    if peak <= 1.0 + 1e-12 or reachable <= 1.0 + margin:
        return _result(0.0, math.inf, math.inf)
    mean = sum(s * ev.mean_load() for s, ev in zip(shares, evaluators))
    if mean >= 1.0:
        return _result(1.0, 0.0, 0.0, evaluators[0])
    tilt = _optimize_tilt(
        lambda t: 1.0 - sum(s * ev.derivative(t * s) for s, ev in zip(shares, evaluators))
    )
    exponent = max(
        0.0, tilt - sum(ev.log_mgf(tilt * s) for s, ev in zip(shares, evaluators))
    )
    return _result(min(1.0, math.exp(-exponent)), tilt, exponent, evaluators[0])


def erlang_b(offered_load: float, servers: int) -> float:
    """Blocking probability of the classical loss system, by the stable
    recursion."""
    if offered_load <= 0.0:
        raise ValueError("offered load must be > 0")
    if servers < 0:
        raise ValueError("server count must be >= 0")
    blocking = 1.0
    for k in range(1, servers + 1):
        blocking = offered_load * blocking / (k + offered_load * blocking)
    return blocking
