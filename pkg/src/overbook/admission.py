"""Tenant admission decisions over shared server capacity.

A TenantRegistry holds the tier catalogue and the currently admitted
tenants.  Three admission rules are offered: a certain-sufficiency
check (sum of envelope peaks fits the server count), an overflow-bound
check on the aggregated envelope, and a per-physical-server
multi-resource bound for heterogeneous tiers.  Admission appends the
tenant; rejection leaves the registry untouched.

The registry is single-writer: evaluate admissions one at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .bounds import TierSpec, chernoff_tail, multiclass_overflow
from .curves import BurstinessCurve, sum_curves
from .service_time import model_from_config

__all__ = [
    "AdmissionDecision",
    "AtomicityError",
    "ConfigurationError",
    "Tenant",
    "TenantRegistry",
    "atomic_factors",
    "split_demand",
]

_SLACK_TOL = 1e-9
_WEIGHT_TOL = 1e-12
_FACTOR_RTOL = 1e-9


class ConfigurationError(ValueError):
    """Registry shape does not fit the requested admission rule."""


class AtomicityError(ValueError):
    """A tier's demand vector is not a scalar multiple of the base tier's.

    Carries the tier name and the two resources whose ratios disagree.
    """

    def __init__(self, tier: str, resource_a: str, resource_b: str) -> None:
        super().__init__(
            f"tier {tier!r} demand is not proportional to the base tier: "
            f"resources {resource_a!r} and {resource_b!r} scale differently"
        )
        self.tier = tier
        self.resources = (resource_a, resource_b)


@dataclass(frozen=True)
class Tenant:
    ident: int
    tier: str
    weights: tuple[float, ...]


@dataclass(frozen=True)
class AdmissionDecision:
    admitted: bool
    bound_or_slack: float
    per_server_bounds: tuple[float, ...] | None = None


def _check_weights(weights: Sequence[float]) -> tuple[float, ...]:
    out = tuple(float(w) for w in weights)
    if not out:
        raise ValueError("need at least one weight")
    if any(not (math.isfinite(w) and w >= 0.0) for w in out):
        raise ValueError("weights must be finite and >= 0")
    if abs(sum(out) - 1.0) > _WEIGHT_TOL:
        raise ValueError("weights must sum to 1")
    return out


def split_demand(
    curve: BurstinessCurve, weights: Sequence[float]
) -> list[BurstinessCurve]:
    """Route one envelope across servers: a scaled copy per weight."""
    return [curve.scaled(w) for w in _check_weights(weights)]


def atomic_factors(tiers: Sequence[TierSpec]) -> list[float]:
    """Scale factor of each tier's demand relative to the first tier.

    The first tier is the atom and must demand a positive amount of
    every resource; every other tier must be a componentwise scalar
    multiple of it.  The returned factors make each tier's bottleneck
    share of any server exactly the atom's share times the factor.
    """
    if not tiers:
        raise ValueError("need at least one tier")
    base = tiers[0]
    if any(v <= 0.0 for v in base.demand.values()):
        raise ValueError("base tier demand must be strictly positive")
    resources = sorted(base.demand)
    factors = []
    for tier in tiers:
        if sorted(tier.demand) != resources:
            raise ConfigurationError(
                f"tier {tier.name!r} does not use the base tier's resources"
            )
        ratios = [tier.demand[r] / base.demand[r] for r in resources]
        for r, ratio in zip(resources[1:], ratios[1:]):
            if not math.isclose(ratio, ratios[0], rel_tol=_FACTOR_RTOL):
                raise AtomicityError(tier.name, resources[0], r)
        factor = ratios[0]
        atom_share = max(base.demand[r] for r in resources)
        if not math.isclose(
            max(tier.demand[r] for r in resources),
            factor * atom_share,
            rel_tol=1e-9,
            abs_tol=1e-15,
        ):
            raise RuntimeError("bottleneck share does not scale with the factor")
        factors.append(factor)
    return factors


class TenantRegistry:
    """Tier catalogue plus admitted tenants under one tolerance."""

    def __init__(self, epsilon: float) -> None:
        if not 0.0 < epsilon < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        self.epsilon = float(epsilon)
        self._tiers: dict[str, TierSpec] = {}
        self._tenants: list[Tenant] = []
        self._next_ident = 1

    def add_tier(self, spec: TierSpec) -> None:
        if spec.name in self._tiers:
            raise ValueError(f"tier {spec.name!r} already registered")
        self._tiers[spec.name] = spec

    def tier(self, name: str) -> TierSpec:
        try:
            return self._tiers[name]
        except KeyError:
            raise ValueError(f"unknown tier {name!r}") from None

    @property
    def tiers(self) -> tuple[TierSpec, ...]:
        return tuple(self._tiers.values())

    @property
    def tenants(self) -> tuple[Tenant, ...]:
        return tuple(self._tenants)

    def remove_tenant(self, ident: int) -> None:
        for i, tenant in enumerate(self._tenants):
            if tenant.ident == ident:
                del self._tenants[i]
                return
        raise ValueError(f"no tenant with id {ident}")

    def _append(self, tier: str, weights: tuple[float, ...]) -> Tenant:
        tenant = Tenant(self._next_ident, tier, weights)
        self._next_ident += 1
        self._tenants.append(tenant)
        return tenant

    def _member_specs(self) -> list[TierSpec]:
        return [self.tier(t.tier) for t in self._tenants]

    def admit_no_blocking(self, new_tier: str, servers: int) -> AdmissionDecision:
        """Admit when the worst-case simultaneous load still fits."""
        if servers < 0:
            raise ValueError("server count must be >= 0")
        spec = self.tier(new_tier)
        used = sum(s.curve.value(s.s_max) for s in self._member_specs())
        requirement = spec.curve.value(spec.s_max)
        slack = servers - used - requirement
        admitted = slack >= -_SLACK_TOL
        if admitted:
            self._append(new_tier, (1.0,))
        return AdmissionDecision(admitted, slack)

    def admit_chernoff(self, new_tier: str, servers: int) -> AdmissionDecision:
        """Admit when the overflow bound on the aggregate envelope,
        candidate included, stays within the tolerance.  All members
        must share one execution-time model."""
        spec = self.tier(new_tier)
        members = self._member_specs() + [spec]
        model = members[0].model
        if any(m.model != model for m in members[1:]):
            raise ConfigurationError(
                "tiers use different execution-time models; aggregate "
                "admission needs one shared model - use admit_multiclass"
            )
        aggregate = sum_curves([m.curve for m in members])
        bound = chernoff_tail(aggregate, model, servers).probability_bound
        admitted = bound <= self.epsilon
        if admitted:
            self._append(new_tier, (1.0,))
        return AdmissionDecision(admitted, bound)

    def _default_weights(
        self, spec: TierSpec, servers: Sequence[Mapping[str, float]]
    ) -> tuple[float, ...]:
        # proportional to how many of this tier fit on each server
        fits = []
        for cap in servers:
            fit = math.inf
            for resource, demand in spec.demand.items():
                if demand > 0.0:
                    fit = min(fit, cap.get(resource, 0.0) / demand)
            fits.append(0.0 if fit is math.inf else max(fit, 0.0))
        total = sum(fits)
        if total <= 0.0:
            raise ConfigurationError(
                f"no server has capacity for tier {spec.name!r}"
            )
        return tuple(f / total for f in fits)

    def admit_multiclass(
        self,
        new_tier: str,
        server_capacities: Mapping[str, float] | Sequence[Mapping[str, float]],
        weights: Sequence[float] | None = None,
    ) -> AdmissionDecision:
        """Admit when every physical server's multi-resource overflow
        bound, with the candidate routed in, stays within tolerance."""
        if isinstance(server_capacities, Mapping):
            servers: tuple[dict, ...] = (dict(server_capacities),)
        else:
            servers = tuple(dict(c) for c in server_capacities)
        if not servers:
            raise ValueError("need at least one server")
        spec = self.tier(new_tier)
        if weights is None:
            routed = self._default_weights(spec, servers)
        else:
            routed = _check_weights(weights)
        if len(routed) != len(servers):
            raise ValueError("one weight per server required")

        tier_loads: list[dict[str, float]] = [dict() for _ in servers]
        for tenant in self._tenants:
            share = tenant.weights
            if len(share) != len(servers):
                raise ConfigurationError(
                    f"tenant {tenant.ident} is split over {len(share)} "
                    f"servers but {len(servers)} were given"
                )
            for i, w in enumerate(share):
                if w > 0.0:
                    load = tier_loads[i]
                    load[tenant.tier] = load.get(tenant.tier, 0.0) + w
        for i, w in enumerate(routed):
            if w > 0.0:
                tier_loads[i][new_tier] = tier_loads[i].get(new_tier, 0.0) + w

        bounds = []
        for cap, load in zip(servers, tier_loads):
            if not load:
                bounds.append(0.0)
                continue
            specs = [
                TierSpec(
                    name=name,
                    curve=self.tier(name).curve.scaled(w),
                    s_max=self.tier(name).s_max,
                    demand=self.tier(name).demand,
                    model=self.tier(name).model,
                )
                for name, w in sorted(load.items())
            ]
            bounds.append(multiclass_overflow(cap, specs).probability_bound)

        admitted = all(b <= self.epsilon for b in bounds)
        if admitted:
            self._append(new_tier, routed)
        return AdmissionDecision(admitted, max(bounds), tuple(bounds))

    def to_config(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "next_ident": self._next_ident,
            "tiers": {
                spec.name: {
                    "pieces": [[o, r] for o, r in spec.curve.pieces],
                    "s_max": spec.s_max,
                    "demand": dict(spec.demand),
                    "model": spec.model.to_config(),
                }
                for spec in self._tiers.values()
            },
            "tenants": [
                {"ident": t.ident, "tier": t.tier, "weights": list(t.weights)}
                for t in self._tenants
            ],
        }

    @classmethod
    def from_config(cls, config: dict) -> "TenantRegistry":
        registry = cls(config["epsilon"])
        for name, raw in config["tiers"].items():
            registry.add_tier(
                TierSpec(
                    name=name,
                    curve=BurstinessCurve(
                        tuple((float(o), float(r)) for o, r in raw["pieces"])
                    ),
                    s_max=float(raw["s_max"]),
                    demand=raw["demand"],
                    model=model_from_config(raw["model"]),
                )
            )
        for raw in config["tenants"]:
            registry._tenants.append(
                Tenant(int(raw["ident"]), raw["tier"], tuple(raw["weights"]))
            )
        registry._next_ident = int(config["next_ident"])
        return registry
