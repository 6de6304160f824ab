"""Command-line front end.

Exit codes: 0 success, 1 quality failure (validation, convergence, gap),
2 I/O or usage error. Seeds resolve as flag > file > $TINYMPC_SEED > 0.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, oracle, quadrotor
from .cache import NonConvergence, build_cache
from .problem import ProblemFileError, load_problem, problem_size, validate
from .solver import Settings, SolverFault, Status, solve, write_solution_csv

EXIT_OK, EXIT_QUALITY, EXIT_USAGE = 0, 1, 2
SEED_ENV = "TINYMPC_SEED"
GAP_TOL, VIOLATION_TOL = 1e-3, 1e-4


class UsageError(Exception):
    pass


def resolve_seed(flag, file_value=None) -> int:
    if flag is not None:
        return int(flag)
    if file_value is not None:
        return int(file_value)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0


def _read_json(path) -> dict:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise UsageError(f"{path}: top level must be an object")
    return d


def _load_problem(path):
    try:
        return load_problem(path)
    except ProblemFileError as exc:
        raise UsageError(str(exc)) from exc


def _settings(args) -> Settings:
    return Settings(tol_primal=args.tol_primal, tol_dual=args.tol_dual,
                    max_iters=args.max_iters, rho_adapt=not args.no_adapt)


def _cache(problem, args):
    return build_cache(problem.model, problem.cost, args.rho, args.ladder_size, args.ladder_factor)


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #

def cmd_validate(args) -> int:
    problem = _load_problem(args.problem)
    issues = validate(problem)
    if issues:
        for msg in issues:
            print(f"invalid: {msg}")
        return EXIT_QUALITY
    size = problem_size(problem)
    print("ok: " + " ".join(f"{k}={v}" for k, v in size.items()))
    return EXIT_OK


def cmd_cache(args) -> int:
    problem = _load_problem(args.problem)
    cache = _cache(problem, args)
    for i, e in enumerate(cache.entries):
        mark = "*" if i == cache.active_index else " "
        print(f"{mark} rho={e.rho!r} riccati_iters={e.riccati_iters} "
              f"residual={e.riccati_residual(cache.A, cache.B):.3e}")
    print(f"cache_bytes={cache.nbytes}")
    if args.out:
        arrays = {"A": cache.A, "B": cache.B, "rhos": np.array(cache.rhos)}
        for i, e in enumerate(cache.entries):
            for name in ("Kinf", "Pinf", "C1", "C2", "Q_aug", "R_aug"):
                arrays[f"{name}_{i}"] = getattr(e, name)
        np.savez(args.out, **arrays)
    return EXIT_OK


def cmd_solve(args) -> int:
    problem = _load_problem(args.problem)
    issues = validate(problem)
    if issues:
        for msg in issues:
            print(f"invalid: {msg}", file=sys.stderr)
        return EXIT_QUALITY
    sol = solve(problem, _cache(problem, args), _settings(args))
    if args.out:
        write_solution_csv(sol, args.out)
    print(f"status={sol.status.value} iters={sol.iters} r_primal={sol.primal_residual!r} "
          f"r_dual={sol.dual_residual!r} rho_final={sol.rho_final!r}")
    if args.strict and sol.status is Status.MAX_ITERS:
        return EXIT_QUALITY
    return EXIT_OK


def load_scenario_doc(d: dict) -> quadrotor.ScenarioConfig:
    """Scenario document; an optional ``preset`` key starts from a named scenario."""
    d = dict(d)
    preset = d.pop("preset", None)
    builders = {"figure_eight": quadrotor.figure_eight_scenario,
                "obstacle": quadrotor.obstacle_scenario,
                "recovery": quadrotor.recovery_scenario,
                "hover": quadrotor.ScenarioConfig}
    if preset is not None and preset not in builders:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(builders)}")
    unknown = set(d) - set(quadrotor.ScenarioConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
    return builders[preset or "hover"](**d)


def cmd_simulate(args) -> int:
    raw = _read_json(args.scenario)
    try:
        seed = resolve_seed(args.seed, raw.get("seed"))
        scenario = load_scenario_doc({**raw, "seed": seed})
        if args.steps is not None:
            scenario.steps = args.steps
        model = quadrotor.scenario_model(scenario)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"malformed scenario {args.scenario}: {exc}") from exc
    cache = quadrotor.scenario_cache(model, scenario)
    episode = quadrotor.simulate_episode(model, scenario, cache)
    csv_path, metrics_path = quadrotor.write_episode(episode, args.out, extra={"seed": seed})
    print(f"wrote {csv_path} and {metrics_path}")
    for k, v in quadrotor.episode_metrics(episode).items():
        print(f"{k}={v!r}")
    return EXIT_OK


def cmd_bench(args) -> int:
    raw = _read_json(args.config)
    overrides = {k: getattr(args, k) for k in ("trials", "workers", "steps")
                 if getattr(args, k) is not None}
    try:
        seed = resolve_seed(args.seed, raw.get("seed"))
        config = bench.BenchConfig.from_dict({**raw, **overrides, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid bench config: {exc}") from exc
    records = bench.run_sweep(config, csv_path=args.out)
    failed = [r for r in records if r.failed]
    for key, s in bench.summarize(records).items():
        print("n={} m={} N={}: ".format(*key)
              + f"mean={s['mean_us']:.2f}us trimmed={s['trimmed_mean_us']:.2f}us "
                f"min={s['min_us']:.2f}us max={s['max_us']:.2f}us iters={s['mean_iters']:.1f}")
    for r in failed:
        print(f"failed n={r.n} m={r.m} N={r.N} trial={r.trial}: {r.failed}", file=sys.stderr)
    return EXIT_QUALITY if failed else EXIT_OK


def cmd_compare_oracle(args) -> int:
    problem = _load_problem(args.problem)
    issues = validate(problem)
    if issues:
        for msg in issues:
            print(f"invalid: {msg}", file=sys.stderr)
        return EXIT_QUALITY
    cache = _cache(problem, args)
    sol = solve(problem, cache, _settings(args))
    # the solver's problem carries the cached terminal cost
    target = problem.with_terminal_cost(cache.entries[sol.rho_index].terminal_cost)
    try:
        ref = oracle.solve_problem(target)
    except oracle.TooLarge as exc:
        print(f"too large: {exc.rows} inequality rows (limit {exc.limit})", file=sys.stderr)
        return EXIT_USAGE
    except oracle.Infeasible as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        return EXIT_QUALITY
    report = oracle.compare(sol, target, ref)
    print(f"status={sol.status.value} iters={sol.iters}")
    for k, v in report.items():
        print(f"{k}={v!r}")
    ok = report["objective_gap_rel"] <= GAP_TOL and report["max_violation"] <= VIOLATION_TOL
    return EXIT_OK if ok else EXIT_QUALITY


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #

def _solver_flags(p):
    d = Settings()
    p.add_argument("--tol-primal", type=float, default=d.tol_primal)
    p.add_argument("--tol-dual", type=float, default=d.tol_dual)
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--no-adapt", action="store_true", help="hold rho fixed")
    _cache_flags(p)


def _cache_flags(p):
    p.add_argument("--rho", type=float, default=5.0, help="centre of the rho ladder")
    p.add_argument("--ladder-size", type=int, default=5, help="odd number of ladder rungs")
    p.add_argument("--ladder-factor", type=float, default=5.0, help="ratio between rungs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riccati-admm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a problem file")
    p.add_argument("problem")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("cache", help="build and summarize the rho cache")
    p.add_argument("problem")
    p.add_argument("--out", help="write the cache arrays to this .npz file")
    _cache_flags(p)
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("solve", help="solve a problem file")
    p.add_argument("problem")
    p.add_argument("--out", help="solution CSV path")
    p.add_argument("--strict", action="store_true", help="exit 1 on MaxIters")
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="run a quadrotor scenario")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="output prefix for .csv and .metrics")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run a scaling sweep")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare-oracle", help="check the solver against exact enumeration")
    p.add_argument("problem")
    _solver_flags(p)
    p.set_defaults(func=cmd_compare_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergence, SolverFault) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUALITY


if __name__ == "__main__":
    sys.exit(main())
