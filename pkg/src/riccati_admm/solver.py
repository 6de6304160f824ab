"""ADMM solver whose primal update is a cached infinite-horizon LQR pass.

Each iteration performs

1. linear cost update    q~ = q + rho (y - z),  r~ = r + rho (g - w)
2. backward pass         p_k = q~_k + C2 p_{k+1} - Kinf' r~_k,  d_k = C1 (B' p_{k+1} + r~_k)
3. forward pass          u_k = -Kinf x_k - d_k,  x_{k+1} = A x_k + B u_k
4. slack projection      z = proj_X(x + y),  w = proj_U(u + g)
5. scaled dual ascent    y += x - z,  g += u - w

and stops when both residuals fall below tolerance. No matrix is factored
or inverted inside :func:`solve`.

The backward pass is seeded with P_N = Pinf, so the problem actually solved
has terminal Hessian ``Pinf - rho I`` (see :attr:`RhoCacheEntry.terminal_cost`),
not the user's Qf. The first knot is the fixed initial state and carries no
slack constraint.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .cache import RhoCacheEntry, SolverCache
from .instrument import online_region
from .problem import MpcProblem
from .projections import CompiledStateConstraints, project_box


class Status(str, Enum):
    SOLVED = "Solved"
    MAX_ITERS = "MaxIters"


class SolverFault(FloatingPointError):
    """Non-finite value encountered in the workspace."""


@dataclass
class Settings:
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    max_iters: int = 4000
    check_every: int = 1
    rho_adapt: bool = True
    rho_switch_threshold: float = 10.0
    rho_switch_interval: int = 1
    warm_start: bool = True

    def __post_init__(self):
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.check_every < 1 or self.rho_switch_interval < 1:
            raise ValueError("max_iters, check_every and rho_switch_interval must be >= 1")


# Blocks of shape (N, n) and (N-1, m); the last entry of each tuple holds the
# base linear costs of the bound problem.
_STATE_BLOCKS = ("x", "z", "y", "p", "q_lin", "z_prev", "q")
_INPUT_BLOCKS = ("u", "w", "g", "d", "r_lin", "w_prev", "r")


@dataclass
class Workspace:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    p: np.ndarray
    q_lin: np.ndarray
    z_prev: np.ndarray
    q: np.ndarray
    u: np.ndarray
    w: np.ndarray
    g: np.ndarray
    d: np.ndarray
    r_lin: np.ndarray
    w_prev: np.ndarray
    r: np.ndarray
    rho_index: int = 0

    @classmethod
    def allocate(cls, n: int, m: int, N: int, rho_index: int = 0) -> "Workspace":
        arrays = {name: np.zeros((N, n)) for name in _STATE_BLOCKS}
        arrays.update({name: np.zeros((N - 1, m)) for name in _INPUT_BLOCKS})
        return cls(**arrays, rho_index=rho_index)

    @property
    def nbytes(self) -> int:
        return sum(getattr(self, name).nbytes for name in _STATE_BLOCKS + _INPUT_BLOCKS)

    def all_finite(self) -> bool:
        return all(np.isfinite(getattr(self, name)).all()
                   for name in ("x", "u", "z", "w", "y", "g"))


@dataclass
class Solution:
    status: Status
    x_traj: np.ndarray
    u_traj: np.ndarray
    iters: int
    primal_residual: float
    dual_residual: float
    rho_final: float
    rho_index: int = 0
    z: Optional[np.ndarray] = field(default=None, repr=False)
    w: Optional[np.ndarray] = field(default=None, repr=False)
    y: Optional[np.ndarray] = field(default=None, repr=False)
    g: Optional[np.ndarray] = field(default=None, repr=False)
    workspace_bytes: int = 0

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED


# --------------------------------------------------------------------------- #
# Iteration steps
# --------------------------------------------------------------------------- #

def update_linear_cost(ws: Workspace, rho: float):
    np.subtract(ws.y, ws.z, out=ws.q_lin)
    ws.q_lin *= rho
    ws.q_lin += ws.q
    np.subtract(ws.g, ws.w, out=ws.r_lin)
    ws.r_lin *= rho
    ws.r_lin += ws.r
    return ws.q_lin, ws.r_lin


def backward_pass(entry: RhoCacheEntry, B: np.ndarray, q_lin: np.ndarray, r_lin: np.ndarray,
                  p: Optional[np.ndarray] = None, d: Optional[np.ndarray] = None):
    """Linear terms of the cost-to-go with cached gains.

    p_N = q~_N, then for k = N-1 ... 1 (rows N-2 ... 0):
    d_k = C1 (B' p_{k+1} + r~_k),  p_k = q~_k + C2 p_{k+1} - Kinf' r~_k.
    """
    N = q_lin.shape[0]
    if p is None:
        p = np.empty_like(q_lin)
    if d is None:
        d = np.empty_like(r_lin)
    C2 = entry.C2
    # the Kinf' r~ term does not depend on p, so it is formed for all k at once
    base = q_lin[:-1] - r_lin @ entry.Kinf
    p[N - 1] = q_lin[N - 1]
    for k in range(N - 2, -1, -1):
        p[k] = base[k] + C2 @ p[k + 1]
    np.matmul(p[1:] @ B + r_lin, entry.C1.T, out=d)
    return p, d


def forward_pass(entry: RhoCacheEntry, A: np.ndarray, B: np.ndarray, x_init, d: np.ndarray,
                 x: Optional[np.ndarray] = None, u: Optional[np.ndarray] = None):
    """Roll out u_k = -Kinf x_k - d_k through the dynamics from x_init.

    The rollout uses the closed-loop matrix, so the dynamics hold to
    rounding error rather than bitwise.
    """
    N = d.shape[0] + 1
    if x is None:
        x = np.empty((N, A.shape[0]))
    if u is None:
        u = np.empty_like(d)
    # x_{k+1} = (A - B Kinf) x_k - B d_k, with (A - B Kinf)' = C2 cached
    C2 = entry.C2
    Bd = d @ B.T
    x[0] = x_init
    for k in range(N - 1):
        x[k + 1] = x[k] @ C2 - Bd[k]
    np.matmul(x[:-1], entry.Kinf.T, out=u)
    np.negative(u, out=u)
    u -= d
    return x, u


def slack_update(ws: Workspace, state_set: CompiledStateConstraints, input_box=None):
    v = ws.x + ws.y
    ws.z[:] = v if state_set.empty else state_set.project(v)
    v = ws.u + ws.g
    ws.w[:] = v if input_box is None else project_box(v, *input_box)
    return ws.z, ws.w


def dual_update(ws: Workspace):
    ws.y += ws.x
    ws.y -= ws.z
    ws.g += ws.u
    ws.g -= ws.w
    return ws.y, ws.g


def compute_residuals(ws: Workspace, rho: float):
    """Infinity-norm consensus gap and rho-scaled slack change."""
    r_primal = max(np.max(np.abs(ws.x - ws.z), initial=0.0),
                   np.max(np.abs(ws.u - ws.w), initial=0.0))
    r_dual = rho * max(np.max(np.abs(ws.z - ws.z_prev), initial=0.0),
                       np.max(np.abs(ws.w - ws.w_prev), initial=0.0))
    return float(r_primal), float(r_dual)


def adapt_rho(cache: SolverCache, r_primal: float, r_dual: float, ws: Workspace,
              threshold: float = 10.0, direction: int = 0) -> int:
    """Move one rung along the rho ladder when the residuals are unbalanced.

    Scaled duals are rescaled by rho_old / rho_new so the unscaled
    multipliers rho * y and rho * g are unchanged. A nonzero ``direction``
    permits moves that way only (+1 up, -1 down).
    """
    i = ws.rho_index
    if r_primal > threshold * r_dual and i + 1 < len(cache.entries) and direction >= 0:
        j = i + 1
    elif r_dual > threshold * r_primal and i > 0 and direction <= 0:
        j = i - 1
    else:
        return i
    scale = cache.entries[i].rho / cache.entries[j].rho
    ws.y *= scale
    ws.g *= scale
    ws.rho_index = j
    return j


# --------------------------------------------------------------------------- #
# Driver
# --------------------------------------------------------------------------- #

def _check_cache(problem: MpcProblem, cache: SolverCache):
    if cache.A.shape != problem.model.A.shape or cache.B.shape != problem.model.B.shape:
        raise ValueError("cache dimensions do not match the problem model")
    if not (np.array_equal(cache.A, problem.model.A) and np.array_equal(cache.B, problem.model.B)):
        raise ValueError("cache was built for a different (A, B)")
    e = cache.entries[0]
    n, m = problem.n, problem.m
    if not (np.allclose(e.Q_aug - e.rho * np.eye(n), problem.cost.Q, atol=1e-12, rtol=1e-12)
            and np.allclose(e.R_aug - e.rho * np.eye(m), problem.cost.R, atol=1e-12, rtol=1e-12)):
        raise ValueError("cache was built for different Q, R")


def _bind_terminal(ws: Workspace, problem: MpcProblem, entry: RhoCacheEntry):
    """Refresh the reference-derived terminal linear cost for ``entry``."""
    if problem.cost.q is None and problem.x_ref is not None:
        ws.q[-1] = -(entry.Pinf @ problem.x_ref[-1]) + entry.rho * problem.x_ref[-1]


def _shift(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    out[:-1] = a[1:]
    out[-1] = a[-1]
    return out


def _init_from(ws: Workspace, warm: Solution, shift: bool):
    move = _shift if shift else np.copy
    ws.x[:] = move(warm.x_traj)
    ws.u[:] = move(warm.u_traj)
    for name in ("z", "w", "y", "g"):
        src = getattr(warm, name)
        if src is not None:
            getattr(ws, name)[:] = move(src)


def solve(problem: MpcProblem, cache: SolverCache, settings: Optional[Settings] = None,
          warm: Optional[Solution] = None, shift: bool = True) -> Solution:
    """Run the cached-Riccati ADMM iteration on ``problem``.

    ``warm`` seeds primal, slack and dual variables from a previous
    solution, shifted one knot forward (last knot repeated) unless
    ``shift`` is False. Raises :class:`SolverFault` on non-finite iterates.
    """
    settings = settings or Settings()
    _check_cache(problem, cache)
    n, m, N = problem.n, problem.m, problem.N
    A, B = problem.model.A, problem.model.B
    c = problem.constraints
    input_box = c.input_box
    state_set = CompiledStateConstraints(c, N, n)

    with online_region():
        ws = Workspace.allocate(n, m, N, rho_index=cache.active_index)
        use_warm = warm is not None and settings.warm_start
        if use_warm and 0 <= warm.rho_index < len(cache.entries) \
                and cache.entries[warm.rho_index].rho == warm.rho_final:
            ws.rho_index = warm.rho_index
        entry = cache.entries[ws.rho_index]
        q, r = problem.linear_terms()
        ws.q[:] = q
        ws.r[:] = r
        _bind_terminal(ws, problem, entry)
        if use_warm:
            _init_from(ws, warm, shift)
            if ws.rho_index != warm.rho_index:
                scale = warm.rho_final / entry.rho
                ws.y *= scale
                ws.g *= scale

        status = Status.MAX_ITERS
        r_primal = r_dual = np.inf
        it = 0
        last_switch = 0
        direction = 0
        for it in range(1, settings.max_iters + 1):
            rho = entry.rho
            update_linear_cost(ws, rho)
            backward_pass(entry, B, ws.q_lin, ws.r_lin, ws.p, ws.d)
            forward_pass(entry, A, B, problem.x_init, ws.d, ws.x, ws.u)
            ws.z_prev[:] = ws.z
            ws.w_prev[:] = ws.w
            slack_update(ws, state_set, input_box)
            dual_update(ws)

            if it % settings.check_every and it != settings.max_iters:
                continue
            r_primal, r_dual = compute_residuals(ws, rho)
            if not (np.isfinite(r_primal) and np.isfinite(r_dual) and ws.all_finite()):
                raise SolverFault(f"non-finite iterate at ADMM iteration {it}")
            if r_primal < settings.tol_primal and r_dual < settings.tol_dual:
                status = Status.SOLVED
                break
            # a switch perturbs both residuals, so the new rung gets time to
            # settle, and rho never reverses within a solve (rungs differ in
            # terminal cost, and reversals can cycle forever)
            if settings.rho_adapt and len(cache.entries) > 1 \
                    and it - last_switch >= settings.rho_switch_interval:
                old = ws.rho_index
                new = adapt_rho(cache, r_primal, r_dual, ws, settings.rho_switch_threshold,
                                direction)
                if new != old:
                    entry = cache.entries[new]
                    _bind_terminal(ws, problem, entry)
                    last_switch = it
                    direction = 1 if new > old else -1

        return Solution(status, ws.x.copy(), ws.u.copy(), it, r_primal, r_dual, entry.rho,
                        ws.rho_index, ws.z.copy(), ws.w.copy(), ws.y.copy(), ws.g.copy(),
                        ws.nbytes)


# --------------------------------------------------------------------------- #
# CSV export
# --------------------------------------------------------------------------- #

SUMMARY_FIELDS = ("iters", "status", "r_primal", "r_dual", "rho_final")


def _fmt(v: float) -> str:
    return repr(float(v))


def solution_to_csv(solution: Solution) -> str:
    """Trajectory table, a blank line, then a one-row summary table."""
    x, u = solution.x_traj, solution.u_traj
    n, m = x.shape[1], u.shape[1]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k"] + [f"x_{i}" for i in range(n)] + [f"u_{j}" for j in range(m)])
    for k in range(x.shape[0]):
        urow = [_fmt(v) for v in u[k]] if k < u.shape[0] else [""] * m
        wr.writerow([k] + [_fmt(v) for v in x[k]] + urow)
    buf.write("\n")
    wr.writerow(SUMMARY_FIELDS)
    wr.writerow([solution.iters, solution.status.value, _fmt(solution.primal_residual),
                 _fmt(solution.dual_residual), _fmt(solution.rho_final)])
    return buf.getvalue()


def write_solution_csv(solution: Solution, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(solution_to_csv(solution))


def read_solution_csv(path):
    """Parse a solution CSV back into ``(x, u, summary_dict)``."""
    with open(path, encoding="utf-8") as fh:
        table, _, tail = fh.read().partition("\n\n")
    rows = list(csv.reader(table.splitlines()))
    header = rows[0]
    n = sum(h.startswith("x_") for h in header)
    x = np.array([[float(v) for v in row[1:1 + n]] for row in rows[1:]])
    u = np.array([[float(v) for v in row[1 + n:]] for row in rows[1:-1]])
    keys, vals = list(csv.reader(tail.splitlines()))[:2]
    summary = dict(zip(keys, vals))
    return x, u, summary
