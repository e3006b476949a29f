"""Execution-time models for capacity planning.

Holding times are bounded: every model carries a hard cap ``s_max`` and its
distribution is the parent law conditioned on not exceeding the cap.  The
module provides truncated Weibull and Gamma families, empirical samples,
mixtures, sliding-window maximum-likelihood fitting, and the envelope tail
probability that feeds the occupancy bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

__all__ = [
    "Blend",
    "Empirical",
    "FitError",
    "ServiceTimeModel",
    "TruncatedGamma",
    "TruncatedWeibull",
    "blend",
    "envelope_tail",
    "fit_window",
    "model_from_config",
]

# Window defaults for online fitting: how many recent samples to keep and
# the forgetting weight used when blending a refit with the previous model.
DEFAULT_WINDOW = 10_000
DEFAULT_FORGETTING = 0.9

_MIN_ACCEPTANCE = 1e-6
_MAX_FIT_ITERATIONS = 200
_FIT_TOL = 1e-9


class FitError(RuntimeError):
    """Maximum-likelihood iteration failed to converge."""

    def __init__(self, message: str, iterations: int) -> None:
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class ServiceTimeModel:
    """Common surface: ccdf, mean, bounded support, seeded sampling."""

    s_max: float

    def ccdf(self, s):
        """P(S > s), vectorized; right-continuous at jumps."""
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None):
        raise NotImplementedError

    def atoms(self) -> tuple[float, ...]:
        """Locations where the ccdf jumps (empty for continuous laws)."""
        return ()

    def to_config(self) -> dict:
        raise NotImplementedError

    def __eq__(self, other) -> bool:
        if not isinstance(other, ServiceTimeModel):
            return NotImplemented
        return self.to_config() == other.to_config()

    def __hash__(self):
        return hash(repr(self.to_config()))

    def _rejection_sample(self, draw, rng, size, acceptance):
        if acceptance < _MIN_ACCEPTANCE:
            raise ValueError("rejection acceptance rate below 1e-6")
        scalar = size is None
        n = 1 if scalar else int(size)
        out = np.empty(n)
        filled = 0
        budget = int(n / acceptance * 1000) + 1_000_000
        while filled < n:
            need = n - filled
            chunk = min(int(need / acceptance * 1.2) + 16, 10_000_000)
            draws = draw(rng, chunk)
            kept = draws[draws <= self.s_max][: need]
            out[filled : filled + kept.size] = kept
            filled += kept.size
            budget -= chunk
            if budget < 0:
                raise RuntimeError("rejection sampling failed to terminate")
        return float(out[0]) if scalar else out


def _validate_positive(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0.0):
        raise ValueError(f"{name} must be a positive finite number")
    return value


@dataclass(frozen=True, eq=False)
class TruncatedWeibull(ServiceTimeModel):
    """Weibull(scale, shape) conditioned on S <= s_max."""

    scale: float
    shape: float
    s_max: float

    def __post_init__(self):
        _validate_positive("scale", self.scale)
        _validate_positive("shape", self.shape)
        _validate_positive("s_max", self.s_max)
        if self._parent_cdf_cap() < _MIN_ACCEPTANCE:
            raise ValueError("truncation keeps less than 1e-6 of the parent mass")

    def _parent_sf(self, s):
        return np.exp(-((np.asarray(s, dtype=float) / self.scale) ** self.shape))

    def _parent_cdf_cap(self) -> float:
        return float(1.0 - self._parent_sf(self.s_max))

    def ccdf(self, s):
        s_arr = np.asarray(s, dtype=float)
        tail_cap = float(self._parent_sf(self.s_max))
        vals = (self._parent_sf(np.clip(s_arr, 0.0, None)) - tail_cap) / (
            1.0 - tail_cap
        )
        vals = np.clip(np.where(s_arr >= self.s_max, 0.0, vals), 0.0, 1.0)
        return float(vals) if s_arr.ndim == 0 else vals

    def mean(self) -> float:
        val, _ = integrate.quad(self.ccdf, 0.0, self.s_max, epsrel=1e-8, limit=200)
        return val

    def sample(self, rng, size=None):
        return self._rejection_sample(
            lambda r, n: self.scale * r.weibull(self.shape, n),
            rng,
            size,
            self._parent_cdf_cap(),
        )

    def to_config(self) -> dict:
        return {
            "family": "weibull",
            "scale": self.scale,
            "shape": self.shape,
            "s_max": self.s_max,
        }


@dataclass(frozen=True, eq=False)
class TruncatedGamma(ServiceTimeModel):
    """Gamma(shape, rate) conditioned on S <= s_max."""

    shape: float
    rate: float
    s_max: float

    def __post_init__(self):
        _validate_positive("shape", self.shape)
        _validate_positive("rate", self.rate)
        _validate_positive("s_max", self.s_max)
        if float(special.gammainc(self.shape, self.rate * self.s_max)) < _MIN_ACCEPTANCE:
            raise ValueError("truncation keeps less than 1e-6 of the parent mass")

    def _parent_sf(self, s):
        return special.gammaincc(self.shape, self.rate * np.clip(s, 0.0, None))

    def ccdf(self, s):
        s_arr = np.asarray(s, dtype=float)
        tail_cap = float(self._parent_sf(self.s_max))
        vals = (self._parent_sf(s_arr) - tail_cap) / (1.0 - tail_cap)
        vals = np.clip(np.where(s_arr >= self.s_max, 0.0, vals), 0.0, 1.0)
        return float(vals) if s_arr.ndim == 0 else vals

    def mean(self) -> float:
        val, _ = integrate.quad(self.ccdf, 0.0, self.s_max, epsrel=1e-8, limit=200)
        return val

    def sample(self, rng, size=None):
        return self._rejection_sample(
            lambda r, n: r.gamma(self.shape, 1.0 / self.rate, n),
            rng,
            size,
            float(special.gammainc(self.shape, self.rate * self.s_max)),
        )

    def to_config(self) -> dict:
        return {
            "family": "gamma",
            "shape": self.shape,
            "rate": self.rate,
            "s_max": self.s_max,
        }


@dataclass(frozen=True, eq=False)
class Empirical(ServiceTimeModel):
    """Point-mass mixture over an observed sample, right-continuous ccdf."""

    samples: tuple[float, ...]
    s_max: float = field(default=0.0)

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("empirical model needs at least one sample")
        ordered = tuple(sorted(float(s) for s in self.samples))
        if ordered[0] <= 0.0:
            raise ValueError("samples must be strictly positive")
        object.__setattr__(self, "samples", ordered)
        cap = self.s_max if self.s_max else ordered[-1]
        if cap < ordered[-1]:
            raise ValueError("s_max must not cut off observed samples")
        object.__setattr__(self, "s_max", float(cap))
        object.__setattr__(self, "_array", np.array(ordered))

    def ccdf(self, s):
        s_arr = np.asarray(s, dtype=float)
        arr = self._array
        vals = 1.0 - np.searchsorted(arr, s_arr.reshape(-1), side="right") / arr.size
        vals = vals.reshape(s_arr.shape)
        return float(vals) if s_arr.ndim == 0 else vals

    def mean(self) -> float:
        # The ccdf is a step function; its integral is the sample mean.
        return float(self._array.mean())

    def sample(self, rng, size=None):
        scalar = size is None
        out = rng.choice(self._array, size=1 if scalar else size)
        return float(out[0]) if scalar else out

    def atoms(self) -> tuple[float, ...]:
        return tuple(np.unique(self._array))

    def to_config(self) -> dict:
        return {
            "family": "empirical",
            "samples": list(self.samples),
            "s_max": self.s_max,
        }


@dataclass(frozen=True, eq=False)
class Blend(ServiceTimeModel):
    """Convex mixture of models: ccdf is the weighted sum of component ccdfs."""

    components: tuple[tuple[float, ServiceTimeModel], ...]

    def __post_init__(self):
        comps = tuple((float(w), m) for w, m in self.components)
        if not comps:
            raise ValueError("blend needs at least one component")
        if any(w < 0.0 for w, _ in comps):
            raise ValueError("blend weights must be nonnegative")
        total = sum(w for w, _ in comps)
        if abs(total - 1.0) > 1e-9:
            raise ValueError("blend weights must sum to 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "s_max", max(m.s_max for _, m in comps))

    def ccdf(self, s):
        s_arr = np.asarray(s, dtype=float)
        vals = sum(w * np.asarray(m.ccdf(s_arr)) for w, m in self.components)
        return float(vals) if s_arr.ndim == 0 else vals

    def mean(self) -> float:
        return sum(w * m.mean() for w, m in self.components)

    def sample(self, rng, size=None):
        weights = np.array([w for w, _ in self.components])
        scalar = size is None
        n = 1 if scalar else int(size)
        picks = rng.choice(len(weights), size=n, p=weights)
        out = np.empty(n)
        for i, (_, model) in enumerate(self.components):
            mask = picks == i
            if mask.any():
                out[mask] = model.sample(rng, int(mask.sum()))
        return float(out[0]) if scalar else out

    def atoms(self) -> tuple[float, ...]:
        merged = sorted({a for _, m in self.components for a in m.atoms()})
        return tuple(merged)

    def to_config(self) -> dict:
        return {
            "family": "blend",
            "components": [[w, m.to_config()] for w, m in self.components],
        }


def blend(current: ServiceTimeModel, refit: ServiceTimeModel, forgetting: float) -> Blend:
    """Mixture keeping ``forgetting`` of the current model's mass."""
    if not 0.0 <= forgetting <= 1.0:
        raise ValueError("forgetting weight must lie in [0, 1]")
    return Blend(((forgetting, current), (1.0 - forgetting, refit)))


def envelope_tail(model: ServiceTimeModel, curve, threshold):
    """P(curve(S) > x): chance the envelope evaluated at the holding time
    exceeds the given load level.  Equals 1 below curve(0) and 0 at or
    beyond curve(s_max)."""
    x_arr = np.asarray(threshold, dtype=float)
    t = np.asarray(curve.inverse(x_arr))
    finite = np.isfinite(t)
    vals = np.where(finite, model.ccdf(np.where(finite, t, 0.0)), 0.0)
    return float(vals) if x_arr.ndim == 0 else vals


def _fit_weibull(x: np.ndarray) -> tuple[float, float]:
    # Profile likelihood: for fixed shape k the MLE scale solves
    # scale^k = mean(x^k); k itself solves
    # sum(x^k ln x)/sum(x^k) - 1/k - mean(ln x) = 0, solved by Newton.
    logs = np.log(x)
    ref = x / x.max()  # rescale so powers stay finite; shape is scale-free
    ref_logs = np.log(ref)
    mean_ref_log = ref_logs.mean()
    k = 1.2 / max(float(logs.std()), 1e-6)
    for _ in range(_MAX_FIT_ITERATIONS):
        powered = ref**k
        s0 = powered.sum()
        s1 = (powered * ref_logs).sum()
        s2 = (powered * ref_logs**2).sum()
        f = s1 / s0 - 1.0 / k - mean_ref_log
        fp = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k)
        k_next = k - f / fp
        if k_next <= 0.0:
            k_next = k / 2.0
        if abs(k_next - k) < _FIT_TOL * max(1.0, k):
            k = k_next
            break
        k = k_next
    else:
        raise FitError("Weibull shape iteration did not converge", _MAX_FIT_ITERATIONS)
    scale = float(x.max()) * float((ref**k).mean() ** (1.0 / k))
    return scale, float(k)


def _fit_gamma(x: np.ndarray) -> tuple[float, float]:
    # Newton on the digamma equation ln(k) - psi(k) = ln(mean) - mean(ln x).
    gap = math.log(x.mean()) - float(np.log(x).mean())
    if gap <= 0.0:
        raise FitError("degenerate sample for Gamma fitting", 0)
    k = (3.0 - gap + math.sqrt((gap - 3.0) ** 2 + 24.0 * gap)) / (12.0 * gap)
    for _ in range(_MAX_FIT_ITERATIONS):
        f = math.log(k) - float(special.digamma(k)) - gap
        fp = 1.0 / k - float(special.polygamma(1, k))
        k_next = k - f / fp
        if k_next <= 0.0:
            k_next = k / 2.0
        if abs(k_next - k) < _FIT_TOL * max(1.0, k):
            k = k_next
            break
        k = k_next
    else:
        raise FitError("Gamma shape iteration did not converge", _MAX_FIT_ITERATIONS)
    rate = k / float(x.mean())
    return float(k), float(rate)


def fit_window(samples, family: str = "weibull") -> ServiceTimeModel:
    """Fit a model to a window of observed holding times.

    Parametric fits use maximum likelihood with the cap set five percent
    above the largest observation.  A window of identical values falls
    back to an empirical point mass.
    """
    x = np.asarray(list(samples), dtype=float)
    if x.size < 10:
        raise ValueError("need at least 10 samples to fit")
    if np.any(x <= 0.0) or not np.all(np.isfinite(x)):
        raise ValueError("samples must be positive and finite")
    if family not in ("weibull", "gamma", "empirical"):
        raise ValueError(f"unknown family {family!r}")
    if family == "empirical":
        return Empirical(tuple(x))
    if np.ptp(x) == 0.0:
        return Empirical(tuple(x))
    cap = float(x.max() * 1.05)
    if family == "weibull":
        scale, shape = _fit_weibull(x)
        return TruncatedWeibull(scale, shape, cap)
    shape, rate = _fit_gamma(x)
    return TruncatedGamma(shape, rate, cap)


def model_from_config(cfg: dict) -> ServiceTimeModel:
    """Build a model from its config-literal form."""
    try:
        family = cfg["family"]
    except (TypeError, KeyError):
        raise ValueError("model config needs a 'family' field") from None
    if family == "weibull":
        return TruncatedWeibull(cfg["scale"], cfg["shape"], cfg["s_max"])
    if family == "gamma":
        return TruncatedGamma(cfg["shape"], cfg["rate"], cfg["s_max"])
    if family == "empirical":
        return Empirical(tuple(cfg["samples"]), cfg.get("s_max", 0.0))
    if family == "blend":
        comps = tuple(
            (float(w), model_from_config(sub)) for w, sub in cfg["components"]
        )
        return Blend(comps)
    raise ValueError(f"unknown model family {family!r}")
