"""Command-line front-end.

Every run command reads a scenario JSON, draws channel estimates from
``--seed`` (or seeds ``seed .. seed+N-1`` with ``--ensemble N``) and writes
JSON results tagged with ``schema_version``. Ensembles write one JSON per
seed plus ``runs.csv`` (one row per seed) and ``summary.json`` (mean/std).

Exit status: 0 on success, 2 when the problem is infeasible, 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import ZfInfeasible, evaluate_strategy, solve_zf
from .brb import TooExpensive, brute_force, solve_brb
from .conic import SolverError
from .feasibility import Strategy
from .perf import SystemUtility, UserUtility
from .rfo import (FairnessProfile, FeasibilityOracle, InfeasibleStart, UnsupportedBound,
                  initial_upper_bound, per_user_upper_bounds, solve_rfo)
from .scenario import (ConfigurationError, PerAntenna, PerTransmitter, TotalPower, draw_channels,
                       load_scenario, make_interference_channel, make_network_mimo,
                       save_scenario, scenario_to_dict, validate)

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("evaluations", "f_min", "f_max")
REGION_COLUMNS = ("theta", "f_lo", "f_hi", "g_1", "g_2", "mse_1", "mse_2", "evaluations")

log = logging.getLogger("robmono")


def _floats(text: str | None):
    if text is None:
        return None
    text = text.strip()
    if text.startswith("["):
        return [float(v) for v in json.loads(text)]
    return [float(v) for v in text.split(",")]


def _system(args) -> SystemUtility:
    return SystemUtility(args.system, tuple(args.weights) if args.weights else None)


def _load(args):
    if not args.scenario:
        raise ConfigurationError("--scenario is required")
    sc = load_scenario(args.scenario)
    if args.xi is not None:
        sc = sc.with_uncertainty(args.xi)
    problems = validate(sc)
    if problems:
        raise ConfigurationError("; ".join(problems))
    return sc


def _setup(args, seed):
    sc = _load(args)
    return sc, draw_channels(sc, seed=seed)


# --- per-seed runners (module level so they pickle) --------------------------------

def run_rfo(args, seed) -> dict:
    sc, real = _setup(args, seed)
    K = sc.num_users
    a = np.asarray(args.start if args.start else np.zeros(K))
    alpha = np.asarray(args.direction if args.direction else np.full(K, 1.0 / K))
    alpha = alpha / alpha.sum()
    oracle = FeasibilityOracle.build(sc, real, args.utility)
    f_up = initial_upper_bound(sc, real, args.utility, a, args.bound, direction=alpha,
                               delta=args.delta, oracle=oracle)
    res = solve_rfo(oracle, FairnessProfile(a, alpha), args.delta, f_up)
    out = res.to_dict()
    out["f_upper"] = f_up
    out["objective"] = res.f_lo
    return out


def _brb_setup(args, seed):
    sc, real = _setup(args, seed)
    oracle = FeasibilityOracle.build(sc, real, args.utility)
    upper = per_user_upper_bounds(sc, real, args.utility, args.bound, args.delta)
    return sc, real, oracle, upper


def run_brb(args, seed) -> dict:
    sc, real, oracle, upper = _brb_setup(args, seed)
    res = solve_brb(oracle, _system(args), upper, args.eps, args.delta,
                    max_evaluations=args.max_evaluations, relative_gap=args.relative_gap)
    out = res.to_dict()
    out["trace"] = [list(t) for t in res.trace]
    out["objective"] = res.f_min
    out["upper"] = upper.tolist()
    return out


def run_brute(args, seed) -> dict:
    sc, real, oracle, upper = _brb_setup(args, seed)
    res = brute_force(oracle, _system(args), upper, args.eps, max_evaluations=args.max_evaluations
                      or 200_000)
    out = {"f_best": res.f_best, "point": res.point.tolist(), "evaluations": res.evaluations,
           "cells": res.cells, "objective": res.f_best}
    if getattr(res.certificate, "strategy", None) is not None:
        out["strategy"] = res.certificate.strategy.to_dict()
    return out


def run_zf(args, seed) -> dict:
    sc, real = _setup(args, seed)
    res = solve_zf(sc, real, args.z, args.utility, _system(args))
    ev = evaluate_strategy(sc, real, res.beamformers)
    out = res.to_dict()
    out["robust_mse"] = ev.gamma.tolist()
    out["geometric_mean_mse"] = ev.geometric_mean_mse
    out["objective"] = res.extracted_value
    return out


def run_evaluate(args, seed) -> dict:
    sc, real = _setup(args, seed)
    with open(args.strategy) as fh:
        data = json.load(fh)
    strat = Strategy.from_dict(data.get("strategy", data))
    eq = None if args.nominal_equalizers else strat.equalizers
    ev = evaluate_strategy(sc, real, strat.beamformers, eq)
    user = UserUtility(args.utility)
    g = ev.utilities(user)
    return {"gamma": ev.gamma.tolist(), "nominal_mse": ev.nominal.tolist(),
            "equalizers": ev.equalizers.tolist(), "g": g.tolist(),
            "objective": SystemUtility(args.system, tuple(args.weights) if args.weights else None)(g),
            "geometric_mean_mse": ev.geometric_mean_mse}


def run_region(args, seed) -> dict:
    sc, real = _setup(args, seed)
    if sc.num_users != 2:
        raise ConfigurationError("region tracing sweeps (theta, 1 - theta) and needs 2 users")
    oracle = FeasibilityOracle.build(sc, real, args.utility)
    user = UserUtility(args.utility)
    M = args.profiles
    rows = []
    for theta in np.linspace(0.0, 1.0, M) if M > 1 else [0.5]:
        alpha = np.array([theta, 1.0 - theta])
        f_up = initial_upper_bound(sc, real, args.utility, np.zeros(2), args.bound,
                                   direction=alpha, delta=args.delta, oracle=oracle)
        res = solve_rfo(oracle, FairnessProfile(np.zeros(2), alpha), args.delta, f_up)
        g = res.point
        rows.append({"theta": float(theta), "f_lo": res.f_lo, "f_hi": res.f_hi,
                     "g_1": float(g[0]), "g_2": float(g[1]),
                     "mse_1": float(user.inverse(g[0])), "mse_2": float(user.inverse(g[1])),
                     "evaluations": res.evaluations})
    return {"boundary": rows, "objective": float(np.mean([r["f_lo"] for r in rows]))}


RUNNERS = {"rfo": run_rfo, "brb": run_brb, "brute": run_brute, "zf": run_zf,
           "evaluate": run_evaluate, "region": run_region}


def _guarded(name, args, seed):
    try:
        return {"status": "ok", **RUNNERS[name](args, seed)}
    except (InfeasibleStart, ZfInfeasible) as exc:
        return {"status": "infeasible", "message": str(exc)}


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r, dict) else r[i] for i, c in enumerate(columns)])


def _emit_side_files(name, result, stem: Path):
    if name == "brb" and "trace" in result:
        _write_csv(stem.with_name(stem.name + "_trace.csv"), TRACE_COLUMNS, result["trace"])
    if name == "region" and "boundary" in result:
        _write_csv(stem.with_name(stem.name + "_boundary.csv"), REGION_COLUMNS, result["boundary"])


def cmd_run(name, args) -> int:
    seeds = list(range(args.seed, args.seed + args.ensemble))
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_guarded, [name] * len(seeds), [args] * len(seeds), seeds))
    else:
        results = [_guarded(name, args, s) for s in seeds]
    header = {"schema_version": SCHEMA_VERSION, "command": name}
    if len(seeds) == 1:
        doc = {**header, "seed": seeds[0], **results[0]}
        if args.out:
            out = Path(args.out)
            _write_json(out, doc)
            _emit_side_files(name, doc, out.with_suffix(""))
        else:
            json.dump(doc, sys.stdout, indent=1, sort_keys=True)
            sys.stdout.write("\n")
        return 2 if results[0]["status"] == "infeasible" else 0

    out = Path(args.out or f"{name}_runs")
    rows = []
    for seed, res in zip(seeds, results):
        doc = {**header, "seed": seed, **res}
        _write_json(out / f"run_{seed}.json", doc)
        _emit_side_files(name, doc, out / f"run_{seed}")
        rows.append({"seed": seed, "status": res["status"], "objective": res.get("objective", ""),
                     "evaluations": res.get("evaluations", "")})
    _write_csv(out / "runs.csv", ("seed", "status", "objective", "evaluations"), rows)
    objs = np.array([r["objective"] for r in rows if r["status"] == "ok"], dtype=float)
    evals = np.array([r["evaluations"] for r in rows if r["evaluations"] != ""], dtype=float)
    summary = {**header, "runs": len(rows), "ok": int(objs.size),
               "objective_mean": float(objs.mean()) if objs.size else None,
               "objective_std": float(objs.std()) if objs.size else None,
               "evaluations_mean": float(evals.mean()) if evals.size else None,
               "evaluations_std": float(evals.std()) if evals.size else None}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0 if objs.size == len(rows) else 2


def cmd_gen(args) -> int:
    power = {"total": TotalPower, "antenna": PerAntenna, "transmitter": PerTransmitter}[args.power](args.q)
    gains = json.loads(args.gains) if args.gains else None
    if args.kind == "network":
        sc = make_network_mimo(args.transmitters, args.antennas, args.users, power,
                               args.xi or 0.0, args.noise, gains)
    else:
        sc = make_interference_channel(args.transmitters, args.antennas, args.q, None,
                                       args.noise, gains)
        if args.xi:
            sc = sc.with_uncertainty(args.xi)
    if args.out:
        save_scenario(sc, args.out)
    else:
        json.dump(scenario_to_dict(sc), sys.stdout, indent=1)
        sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robmono", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a scenario JSON")
    g.add_argument("--kind", choices=("network", "interference"), default="network")
    g.add_argument("--transmitters", type=int, default=1)
    g.add_argument("--antennas", type=lambda s: [int(v) for v in s.split(",")], default=[3])
    g.add_argument("--users", type=int, default=2)
    g.add_argument("--power", choices=("total", "antenna", "transmitter"), default="total")
    g.add_argument("--q", type=float, default=10.0)
    g.add_argument("--xi", type=float, default=None)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--gains", help="JSON K_t x K_r matrix of average channel gains")
    g.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    g.add_argument("--out")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--ensemble", type=int, default=1)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--utility", default="rate",
                        choices=("inverse-mse", "rate", "neg-mse"), help="user utility g_k")
    common.add_argument("--system", default="sum",
                        choices=("sum", "prop-fair", "harmonic", "max-min"), help="system utility f")
    common.add_argument("--weights", type=_floats)
    common.add_argument("--eps", type=float, default=0.05)
    common.add_argument("--delta", type=float, default=0.1)
    common.add_argument("--xi", type=float, default=None, help="override the uncertainty radius")
    common.add_argument("--bound", choices=("sup", "power", "single-user"), default="power")
    common.add_argument("--out")

    r = sub.add_parser("rfo", parents=[common], help="fairness-profile bisection")
    r.add_argument("--start", type=_floats)
    r.add_argument("--direction", type=_floats)
    for name, text in (("brb", "global branch-reduce-and-bound"), ("brute", "brute-force box search")):
        b = sub.add_parser(name, parents=[common], help=text)
        b.add_argument("--max-evaluations", type=int, default=None)
        b.add_argument("--relative-gap", type=float, default=None)
    z = sub.add_parser("zf", parents=[common], help="zero-forcing / interference-constrained")
    z.add_argument("--z", default="0", help="cap, comma list, or 'auto'")
    e = sub.add_parser("evaluate", parents=[common], help="worst-case MSEs of a strategy")
    e.add_argument("--strategy", required=True)
    e.add_argument("--nominal-equalizers", action="store_true",
                   help="replace the stored equalizers by nominal MMSE ones")
    rg = sub.add_parser("region", parents=[common], help="trace a 2-user boundary")
    rg.add_argument("--profiles", type=int, default=21)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "zf" and args.z != "auto":
            args.z = _floats(args.z)
        return cmd_run(args.command, args)
    except (ConfigurationError, UnsupportedBound, TooExpensive, SolverError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
