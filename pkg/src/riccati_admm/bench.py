"""Scaling benchmarks on random controllable tracking problems.

Each trial builds a cache (untimed), then runs a receding-horizon loop of
``steps`` warm-started solves against a noisy copy of the model and times
only the solve calls.
"""
from __future__ import annotations

import csv
import io
import json
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import trim_mean

from .cache import NonConvergence, build_cache
from .problem import ConstraintSet, CostSpec, LtiModel, MpcProblem, controllability_rank
from .solver import Settings, Workspace, solve

AXES = {"state_dim": "n", "input_dim": "m", "horizon": "N"}
CSV_HEADER = ("n", "m", "N", "trial", "iters", "total_us", "per_iter_us",
              "ws_bytes_pred", "ws_bytes_meas", "cache_bytes")
FLOAT_BYTES = 8


class GenerationFailure(RuntimeError):
    pass


def random_controllable_system(n: int, m: int, seed, spectral_radius: float = 0.95,
                               dt: float = 1.0, max_attempts: int = 100) -> LtiModel:
    """Uniform[-1, 1] entries, A rescaled to the given spectral radius."""
    if n < 1 or m < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        A = rng.uniform(-1.0, 1.0, (n, n))
        B = rng.uniform(-1.0, 1.0, (n, m))
        rad = np.max(np.abs(np.linalg.eigvals(A)))
        if rad < 1e-6:
            continue
        A *= spectral_radius / rad
        if controllability_rank(A, B) == n:
            return LtiModel(A, B, dt)
    raise GenerationFailure(f"no controllable ({n}, {m}) system in {max_attempts} attempts")


def reference_signal(n: int, length: int, seed, smoothing: float = 0.05) -> np.ndarray:
    """Exponentially smoothed white noise, rescaled to unit peak."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((length, n))
    ref = np.empty_like(white)
    acc = np.zeros(n)
    for k in range(length):
        acc = (1 - smoothing) * acc + smoothing * white[k]
        ref[k] = acc
    peak = np.max(np.abs(ref))
    return ref / peak if peak > 0 else ref


def tracking_problem(model: LtiModel, N: int, seed, input_bound: float = 0.5,
                     reference: Optional[np.ndarray] = None) -> MpcProblem:
    """Q = I, R = 0.1 I tracking problem with a symmetric input box."""
    n, m = model.n, model.m
    rng = np.random.default_rng(seed)
    if reference is None:
        reference = reference_signal(n, N, rng.integers(2**32))
    x_init = reference[0] + 0.1 * rng.uniform(-1.0, 1.0, n)
    cost = CostSpec(np.eye(n), 0.1 * np.eye(m), np.eye(n))
    box = (np.full(m, -input_bound), np.full(m, input_bound))
    return MpcProblem(model, cost, N, x_init, ConstraintSet(input_box=box), x_ref=reference[:N])


def memory_model(n: int, m: int, N: int, num_rho_entries: int) -> dict:
    """Predicted bytes for the cache and the solver workspace.

    Cache: per rho entry Kinf (m n), Pinf, C2, Q_aug (n^2 each), C1, R_aug
    (m^2 each), plus one shared copy of A and B. Workspace: seven (N, n)
    blocks (x, z, y, p, q~, previous z, base q) and seven (N-1, m) blocks
    (u, w, g, d, r~, previous w, base r).
    """
    per_entry = m * n + 3 * n * n + 2 * m * m
    cache = FLOAT_BYTES * (num_rho_entries * per_entry + n * n + n * m)
    workspace = FLOAT_BYTES * (7 * N * n + 7 * (N - 1) * m)
    return {"cache_bytes": cache, "workspace_bytes": workspace}


def measure_workspace_allocation(n: int, m: int, N: int) -> int:
    """Bytes of array data numpy allocates for one solver workspace.

    Read from tracemalloc's numpy domain, so it is a measurement of the
    allocator rather than a sum of ``nbytes``.
    """
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    only_numpy = [tracemalloc.DomainFilter(True, np.lib.tracemalloc_domain)]
    try:
        before = tracemalloc.take_snapshot().filter_traces(only_numpy)
        ws = Workspace.allocate(n, m, N)
        after = tracemalloc.take_snapshot().filter_traces(only_numpy)
    finally:
        if not was_tracing:
            tracemalloc.stop()
    del ws
    return sum(s.size_diff for s in after.compare_to(before, "filename"))


@dataclass
class BenchConfig:
    axis: str = "state_dim"
    values: list = field(default_factory=lambda: [4, 8, 12])
    n: int = 4
    m: int = 4
    N: int = 10
    trials: int = 5
    seed: int = 0
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    max_iters: int = 4000
    steps: int = 100
    noise_std: float = 1e-3
    input_bound: float = 0.5
    rho: float = 5.0
    ladder_size: int = 5
    ladder_factor: float = 5.0
    workers: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {sorted(AXES)}, got {self.axis!r}")
        if self.trials < 1 or self.steps < 1:
            raise ValueError("trials and steps must be >= 1")
        if min([self.n, self.m, self.N] + list(self.values)) < 1:
            raise ValueError("dimensions must be >= 1")

    def points(self) -> list:
        key = AXES[self.axis]
        out = []
        for v in self.values:
            dims = {"n": self.n, "m": self.m, "N": self.N}
            dims[key] = int(v)
            out.append((dims["n"], dims["m"], dims["N"]))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bench config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class BenchRecord:
    n: int
    m: int
    N: int
    trial: int
    iters: int
    total_solve_time: float
    time_per_iteration: float
    workspace_bytes_predicted: int
    workspace_bytes_measured: int
    cache_bytes: int
    per_iter_min: float = 0.0
    per_iter_max: float = 0.0
    cache_build_time: float = 0.0
    failed: Optional[str] = None

    def csv_row(self) -> list:
        return [self.n, self.m, self.N, self.trial, self.iters,
                repr(self.total_solve_time), repr(self.time_per_iteration),
                self.workspace_bytes_predicted, self.workspace_bytes_measured, self.cache_bytes]


def _trial_seed(seed, n, m, N, trial) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), n, m, N, trial])


def run_trial(cfg: BenchConfig, n: int, m: int, N: int, trial: int) -> BenchRecord:
    """One receding-horizon run; times are in microseconds."""
    ss = _trial_seed(cfg.seed, n, m, N, trial)
    model_seed, ref_seed, prob_seed, noise_seed = ss.spawn(4)
    model = random_controllable_system(n, m, model_seed)
    reference = reference_signal(n, cfg.steps + N, ref_seed)
    problem = tracking_problem(model, N, prob_seed, cfg.input_bound, reference)
    pred = memory_model(n, m, N, cfg.ladder_size)
    try:
        t0 = time.perf_counter_ns()
        cache = build_cache(model, problem.cost, cfg.rho, cfg.ladder_size, cfg.ladder_factor)
        build_us = (time.perf_counter_ns() - t0) / 1e3
    except NonConvergence as exc:
        return _failed(n, m, N, trial, str(exc))

    settings = Settings(tol_primal=cfg.tol_primal, tol_dual=cfg.tol_dual, max_iters=cfg.max_iters)
    rng = np.random.default_rng(noise_seed)
    x = problem.x_init.copy()
    warm = None
    total_ns, total_iters, per_iter = 0, 0, []
    ws_meas = measure_workspace_allocation(n, m, N)
    for step in range(cfg.steps):
        problem.x_init = x
        problem.x_ref = reference[step:step + N]
        t0 = time.perf_counter_ns()
        sol = solve(problem, cache, settings, warm=warm)
        dt_ns = time.perf_counter_ns() - t0
        warm = sol
        total_ns += dt_ns
        total_iters += sol.iters
        per_iter.append(dt_ns / sol.iters / 1e3)
        x = model.A @ x + model.B @ sol.u_traj[0] + cfg.noise_std * rng.standard_normal(n)
    total_us = total_ns / 1e3
    return BenchRecord(n, m, N, trial, total_iters, total_us, total_us / total_iters,
                       pred["workspace_bytes"], ws_meas, cache.nbytes,
                       min(per_iter), max(per_iter), build_us)


def _failed(n, m, N, trial, reason) -> BenchRecord:
    return BenchRecord(n, m, N, trial, 0, 0.0, 0.0, 0, 0, 0, failed=reason)


def _run_point(args) -> list:
    cfg, (n, m, N) = args
    out = []
    for trial in range(cfg.trials):
        try:
            out.append(run_trial(cfg, n, m, N, trial))
        except GenerationFailure as exc:
            out.append(_failed(n, m, N, trial, str(exc)))
    return out


def run_sweep(config: BenchConfig, csv_path=None) -> list:
    """Run every sweep point; trials within a point run sequentially.

    With ``csv_path`` the file is rewritten after each finished point, so a
    crash part-way leaves the completed points on disk.
    """
    jobs = [(config, point) for point in config.points()]
    records: list = []

    def flush(point_records):
        records.extend(point_records)
        if csv_path is not None:
            Path(csv_path).write_text(sweep_to_csv(config, records), encoding="utf-8")

    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            for point_records in pool.map(_run_point, jobs):
                flush(point_records)
    else:
        for job in jobs:
            flush(_run_point(job))
    return records


def sweep_to_csv(config: BenchConfig, records: list) -> str:
    buf = io.StringIO()
    for key, val in asdict(config).items():
        buf.write(f"# {key}={json.dumps(val)}\n")
    for r in records:
        if r.failed:
            buf.write(f"# failed n={r.n} m={r.m} N={r.N} trial={r.trial}: {r.failed}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    for r in records:
        if not r.failed:
            wr.writerow(r.csv_row())
    return buf.getvalue()


def summarize(records: list) -> dict:
    """Per (n, m, N): mean, 20% trimmed mean, min and max time per iteration."""
    groups: dict = {}
    for r in records:
        if not r.failed:
            groups.setdefault((r.n, r.m, r.N), []).append(r)
    out = {}
    for key, recs in groups.items():
        t = np.array([r.time_per_iteration for r in recs])
        out[key] = {
            "trials": len(recs),
            "mean_us": float(t.mean()),
            "trimmed_mean_us": float(trim_mean(t, 0.2)),
            "min_us": float(min(r.per_iter_min for r in recs)),
            "max_us": float(max(r.per_iter_max for r in recs)),
            "mean_iters": float(np.mean([r.iters for r in recs])),
        }
    return out
