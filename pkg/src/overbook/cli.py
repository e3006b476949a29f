"""Command-line driver.

Subcommands: ``bound`` (capacity bounds for a curve/model pair),
``simulate`` (run a scenario, export tail + summary CSVs), ``table1``
(side-by-side capacity comparison for the built-in workloads),
``estimate`` (fit a burstiness curve from an arrival trace), ``admit``
(evaluate a tenant admission against a registry).

Exit codes: 0 success or admit, 2 configuration error, 3 runtime
failure, 4 admission rejected.  Given the same config and seed, every
command writes byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import benchmark
from .admission import TenantRegistry
from .bounds import chernoff_tail, min_servers
from .curves import BurstinessCurve
from .estimator import VirtualQueueBank
from .service_time import model_from_config
from .simulator import (
    DEFAULT_HORIZON,
    min_servers_simulated,
    replicate,
    run,
    scenario_from_config,
)
from .tracefile import read_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_REJECT = 4


class ConfigError(ValueError):
    pass


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_bound(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    curve = (
        BurstinessCurve(tuple((float(o), float(r)) for o, r in cfg["curve"]))
        if "curve" in cfg
        else benchmark.reference_curve()
    )
    model = (
        model_from_config(cfg["model"]) if "model" in cfg else benchmark.reference_model()
    )
    methods = list(cfg.get("methods", ("chernoff", "markov", "no_blocking")))
    if args.epsilon is not None:
        epsilons = [args.epsilon]
    else:
        epsilons = [float(e) for e in cfg.get("epsilons", (0.01,))]
    for eps in epsilons:
        if not 0.0 < eps < 1.0:
            raise ConfigError(f"epsilon {eps} outside (0, 1)")
    capacities = [int(k) for k in cfg.get("capacities", ())]

    report: dict = {"min_servers": {}, "tail_bound": {}}
    for method in methods:
        per_eps = {}
        for eps in epsilons:
            k = min_servers(curve, model, eps, method=method)
            per_eps[repr(eps)] = k
            print(f"{method} eps={eps:g} min_servers={k}")
        report["min_servers"][method] = per_eps
    for k in capacities:
        omega = chernoff_tail(curve, model, k).probability_bound
        report["tail_bound"][str(k)] = omega
        print(f"chernoff K={k} omega={omega!r}")
    out = _out_dir(args)
    if out is not None:
        (out / "bound.json").write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def _resolve_scenario(args):
    if args.config:
        scenario = scenario_from_config(_load_json(args.config))
    elif args.preset == "deterministic":
        scenario = benchmark.deterministic_scenario()
    else:
        scenario = benchmark.poisson_scenario()
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    return scenario


def cmd_simulate(args) -> int:
    scenario = _resolve_scenario(args)
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    if args.reps == 1:
        stats = run(scenario)
        tail = stats.tail_curve()
        summary = {
            "mean_q": stats.mean_q,
            "var_q": stats.var_q,
            "admitted_rate": stats.admitted_rate,
            "avg_admitted_batch": stats.avg_admitted_batch,
            "dropped_by_regulator": stats.dropped_by_regulator,
            "blocked_at_servers": stats.blocked_at_servers,
            "total_time": stats.total_time,
        }
    else:
        summary_rep = replicate(scenario, args.reps)
        tail = summary_rep.tail_mean
        summary = {
            "mean_q": summary_rep.mean_q,
            "mean_q_se": summary_rep.mean_q_se,
            "mean_q_values": list(summary_rep.mean_q_values),
            "reps": args.reps,
        }

    out = _out_dir(args) or Path(".")
    rows = ["K,p_q_gt_k,omega"]
    for k, p in enumerate(tail):
        omega = chernoff_tail(scenario.regulator, scenario.model, k).probability_bound
        rows.append(f"{k},{float(p)!r},{omega!r}")
    (out / "tail.csv").write_text("\n".join(rows) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"mean_q={summary['mean_q']:.3f} tail_rows={len(tail)} out={out}")
    return EXIT_OK


def cmd_table1(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    eps = args.epsilon if args.epsilon is not None else float(cfg.get("epsilon", 0.01))
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"epsilon {eps} outside (0, 1)")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    horizon = float(cfg.get("horizon", DEFAULT_HORIZON))

    scenarios = []
    for label, builder in (
        ("deterministic", benchmark.deterministic_scenario),
        ("poisson", benchmark.poisson_scenario),
    ):
        if label in cfg:
            scenario = scenario_from_config(cfg[label]).with_seed(seed)
        else:
            scenario = builder(horizon=horizon, seed=seed)
        scenarios.append((label, scenario))

    curve = benchmark.reference_curve()
    model = benchmark.reference_model()
    chern = min_servers(curve, model, eps, method="chernoff")
    certain = min_servers(curve, model, eps, method="no_blocking")
    lines = [f"{'arrival':<14}{'simulated':>10}{'chernoff':>10}{'no_blocking':>12}"]
    csv_rows = ["arrival,simulated,chernoff,no_blocking"]
    for label, scenario in scenarios:
        sim = min_servers_simulated(scenario, eps)
        lines.append(f"{label:<14}{sim:>10}{chern:>10}{certain:>12}")
        csv_rows.append(f"{label},{sim},{chern},{certain}")
    print("\n".join(lines))
    out = _out_dir(args)
    if out is not None:
        (out / "table1.csv").write_text("\n".join(csv_rows) + "\n")
    return EXIT_OK


def cmd_estimate(args) -> int:
    trace = read_trace(args.trace)
    if args.rates:
        rates = [float(r) for r in args.rates.split(",")]
        bank = VirtualQueueBank(sorted(rates), args.delta, sample_dt=args.sample_dt)
    else:
        bank = VirtualQueueBank.geometric(
            args.peak_rate,
            args.delta,
            n_rates=args.n_rates,
            span=args.span,
            sample_dt=args.sample_dt,
        )
    for t, count in trace.events:
        bank.observe(t, count)

    curve = bank.empirical_curve()
    print(f"BurstinessCurve({curve.pieces!r})")
    print(f"{'rate':>12}  {'sigma':>14}")
    sigmas = {}
    for r in bank.rates:
        sigma = bank.empirical_sigma(float(r))
        sigmas[repr(float(r))] = sigma
        print(f"{float(r):>12.6g}  {sigma:>14.6g}")
    cover = bank.coverage()
    print(f"coverage {cover!r}")
    out = _out_dir(args)
    if out is not None:
        doc = {
            "pieces": [[o, r] for o, r in curve.pieces],
            "delta": bank.delta,
            "sigma": sigmas,
            "coverage": cover,
        }
        (out / "estimate.json").write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_admit(args) -> int:
    if args.registry and Path(args.registry).exists():
        cfg = _load_json(args.registry)
        if args.epsilon is not None:
            cfg["epsilon"] = args.epsilon
        registry = TenantRegistry.from_config(cfg)
    else:
        registry = TenantRegistry(args.epsilon if args.epsilon is not None else 0.01)
        registry.add_tier(benchmark.reference_tier())

    if args.policy == "no_blocking":
        if args.servers is None:
            raise ConfigError("no_blocking policy needs --servers")
        decision = registry.admit_no_blocking(args.tier, args.servers)
        metric = "slack"
    elif args.policy == "chernoff":
        if args.servers is None:
            raise ConfigError("chernoff policy needs --servers")
        decision = registry.admit_chernoff(args.tier, args.servers)
        metric = "bound"
    else:
        if args.capacity is None:
            raise ConfigError("multiclass policy needs --capacity")
        raw = Path(args.capacity)
        text = raw.read_text() if raw.exists() else args.capacity
        try:
            capacity = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--capacity: {exc.msg}") from None
        weights = (
            tuple(float(w) for w in args.weights.split(",")) if args.weights else None
        )
        decision = registry.admit_multiclass(args.tier, capacity, weights=weights)
        metric = "bound"

    verdict = "admit" if decision.admitted else "reject"
    print(f"{verdict} {metric}={decision.bound_or_slack!r}")
    if decision.admitted and args.save:
        if not args.registry:
            raise ConfigError("--save needs --registry")
        Path(args.registry).write_text(
            json.dumps(registry.to_config(), indent=2) + "\n"
        )
    return EXIT_OK if decision.admitted else EXIT_REJECT


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="RNG seed override")
    common.add_argument("--out", help="output directory")
    common.add_argument("--reps", type=int, default=1, help="replication count")
    common.add_argument("--epsilon", type=float, help="overflow budget in (0, 1)")

    parser = argparse.ArgumentParser(
        prog="overbook",
        description="Capacity planning for burst-regulated shared servers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "bound", parents=[common], help="capacity bounds for a curve/model pair"
    )
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser(
        "simulate", parents=[common], help="run a scenario, export tail + summary"
    )
    p.add_argument(
        "--preset",
        choices=("poisson", "deterministic"),
        default="poisson",
        help="built-in scenario when no --config is given",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "table1",
        parents=[common],
        help="capacity comparison across the built-in workloads",
    )
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser(
        "estimate", parents=[common], help="fit a burstiness curve from a trace"
    )
    p.add_argument("trace", help="CSV trace file (timestamp,count)")
    p.add_argument("--delta", type=float, default=0.01, help="exceedance fraction")
    p.add_argument("--rates", help="comma-separated drain rates (overrides the grid)")
    p.add_argument("--peak-rate", type=float, default=100.0)
    p.add_argument("--n-rates", type=int, default=16)
    p.add_argument("--span", type=float, default=100.0)
    p.add_argument("--sample-dt", type=float, help="grid sampling step")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser(
        "admit", parents=[common], help="evaluate a tenant admission"
    )
    p.add_argument("--registry", help="registry JSON; fresh single-tier if absent")
    p.add_argument("--tier", default="standard")
    p.add_argument(
        "--policy",
        choices=("no_blocking", "chernoff", "multiclass"),
        default="chernoff",
    )
    p.add_argument("--servers", type=int, help="pool capacity in servers")
    p.add_argument(
        "--capacity", help="per-server resource JSON (inline or a file path)"
    )
    p.add_argument("--weights", help="comma-separated routing weights")
    p.add_argument(
        "--save", action="store_true", help="write the updated registry on admit"
    )
    p.set_defaults(func=cmd_admit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # simulation/optimization diagnostics
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def run_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run_main()
