"""Exact reference solutions for small MPC problems.

States are eliminated through the dynamics, leaving a dense QP in the
stacked inputs v = (u_1, ..., u_{N-1}):

    min 0.5 v' H v + f' v + const   s.t.  G v <= h,  E v = e

Plane (equality) rows are removed by restricting to the null space of E,
then every subset of inequality rows is tried as an active set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
import scipy.linalg

from .problem import MpcProblem, constraint_violation, eval_objective

MAX_INEQ = 14
SINGULAR_TOL = 1e-12
FEAS_TOL = 1e-9
MULT_TOL = 1e-10
TIE_TOL = 1e-12


class TooLarge(ValueError):
    def __init__(self, rows: int, limit: int):
        super().__init__(f"{rows} inequality rows exceed the enumeration limit of {limit}")
        self.rows = rows
        self.limit = limit


class Infeasible(ValueError):
    pass


@dataclass
class DenseQp:
    H: np.ndarray
    f: np.ndarray
    const: float
    G: np.ndarray
    h: np.ndarray
    E: np.ndarray
    e: np.ndarray
    row_labels: list = field(default_factory=list)
    eq_labels: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def objective(self, v) -> float:
        return float(0.5 * v @ self.H @ v + self.f @ v + self.const)


@dataclass
class OracleResult:
    v: np.ndarray
    objective: float
    active: tuple
    multipliers: np.ndarray
    x_traj: Optional[np.ndarray] = None
    u_traj: Optional[np.ndarray] = None


def prediction_matrices(A, B, N):
    """Return (Sx, Su) with stacked states X = Sx x_init + Su v, X of shape (N*n,)."""
    n, m = B.shape
    Sx = np.zeros((N * n, n))
    Su = np.zeros((N * n, (N - 1) * m))
    Ak = np.eye(n)
    for k in range(N):
        Sx[k * n:(k + 1) * n] = Ak
        Ak = A @ Ak
    for k in range(1, N):
        for j in range(k):
            # x_{k} depends on u_j through A^{k-1-j} B
            Su[k * n:(k + 1) * n, j * m:(j + 1) * m] = Sx[(k - 1 - j) * n:(k - j) * n] @ B
    return Sx, Su


def rollout(problem: MpcProblem, v) -> tuple:
    u = np.asarray(v, dtype=float).reshape(problem.N - 1, problem.m)
    x = np.empty((problem.N, problem.n))
    x[0] = problem.x_init
    for k in range(problem.N - 1):
        x[k + 1] = problem.model.A @ x[k] + problem.model.B @ u[k]
    return x, u


def condense(problem: MpcProblem) -> DenseQp:
    A, B = problem.model.A, problem.model.B
    n, m, N = problem.n, problem.m, problem.N
    Sx, Su = prediction_matrices(A, B, N)
    x0 = problem.x_init
    Qbar = scipy.linalg.block_diag(*([problem.cost.Q] * (N - 1) + [problem.cost.Qf]))
    Rbar = scipy.linalg.block_diag(*([problem.cost.R] * (N - 1)))
    q, r = problem.linear_terms()
    qbar, rbar = q.ravel(), r.ravel()

    X0 = Sx @ x0
    H = Su.T @ Qbar @ Su + Rbar
    H = 0.5 * (H + H.T)
    f = Su.T @ (Qbar @ X0 + qbar) + rbar
    const = float(0.5 * X0 @ Qbar @ X0 + qbar @ X0)

    G_rows, h_rows, labels = [], [], []
    E_rows, e_rows, eq_labels = [], [], []

    def add_state_row(k, a, b, label, equality=False):
        # row over v for a . x_k (<= or ==) b
        row = a @ Su[k * n:(k + 1) * n]
        rhs = b - a @ X0[k * n:(k + 1) * n]
        if not np.any(row):
            # constant row (e.g. on the fixed initial state)
            ok = abs(rhs) <= FEAS_TOL if equality else rhs >= -FEAS_TOL
            if not ok:
                raise Infeasible(f"constraint {label} violated by the fixed initial state")
            return
        (E_rows if equality else G_rows).append(row)
        (e_rows if equality else h_rows).append(rhs)
        (eq_labels if equality else labels).append(label)

    c = problem.constraints
    if c.input_box is not None:
        lo, hi = c.input_box
        for k in range(N - 1):
            for i in range(m):
                col = k * m + i
                if np.isfinite(hi[i]):
                    row = np.zeros((N - 1) * m)
                    row[col] = 1.0
                    G_rows.append(row), h_rows.append(hi[i]), labels.append((k, "u_hi", i))
                if np.isfinite(lo[i]):
                    row = np.zeros((N - 1) * m)
                    row[col] = -1.0
                    G_rows.append(row), h_rows.append(-lo[i]), labels.append((k, "u_lo", i))
    if c.state_box is not None:
        lo, hi = c.state_box
        for k in range(1, N):
            for i in range(n):
                e_i = np.zeros(n)
                e_i[i] = 1.0
                if np.isfinite(hi[i]):
                    add_state_row(k, e_i, hi[i], (k, "x_hi", i))
                if np.isfinite(lo[i]):
                    add_state_row(k, -e_i, -lo[i], (k, "x_lo", i))
    # knot 0 is the fixed initial state and is left unconstrained
    for k in range(1, N):
        for j, hs in enumerate(c.halfspaces_at(k)):
            add_state_row(k, hs.a, hs.b, (k, "half", j))
        for j, pl in enumerate(c.planes_at(k)):
            add_state_row(k, pl.a, pl.b, (k, "plane", j), equality=True)

    dim = (N - 1) * m
    as_mat = lambda rows: np.array(rows).reshape(-1, dim)  # noqa: E731
    return DenseQp(H, f, const, as_mat(G_rows), np.array(h_rows, dtype=float),
                   as_mat(E_rows), np.array(e_rows, dtype=float), labels, eq_labels)


def _reduce_equalities(qp: DenseQp):
    """Substitute v = v0 + Z t so the equality rows hold identically."""
    if qp.E.shape[0] == 0:
        return np.zeros(qp.dim), np.eye(qp.dim)
    v0, *_ = np.linalg.lstsq(qp.E, qp.e, rcond=None)
    if np.max(np.abs(qp.E @ v0 - qp.e)) > 1e-8:
        raise Infeasible("equality constraints are inconsistent")
    return v0, scipy.linalg.null_space(qp.E)


def solve_active_set_enum(qp: DenseQp, max_ineq: int = MAX_INEQ) -> OracleResult:
    """Global optimum by trying every inequality subset as the active set.

    Candidates with a singular KKT matrix are skipped. Ties within 1e-12
    in objective go to the smaller active set.
    """
    rows = qp.G.shape[0]
    if rows > max_ineq:
        raise TooLarge(rows, max_ineq)
    v0, Z = _reduce_equalities(qp)
    H = Z.T @ qp.H @ Z
    f = Z.T @ (qp.H @ v0 + qp.f)
    G = qp.G @ Z
    h = qp.h - qp.G @ v0
    dim = H.shape[0]

    best = None
    for size in range(0, min(rows, dim) + 1):
        subsets = list(combinations(range(rows), size))
        if not subsets:
            continue
        S = np.array(subsets, dtype=int).reshape(len(subsets), size)
        kkt = np.zeros((len(subsets), dim + size, dim + size))
        kkt[:, :dim, :dim] = H
        rhs = np.zeros((len(subsets), dim + size))
        rhs[:, :dim] = -f
        if size:
            GS = G[S]                              # (batch, size, dim)
            kkt[:, :dim, dim:] = np.transpose(GS, (0, 2, 1))
            kkt[:, dim:, :dim] = GS
            rhs[:, dim:] = h[S]
        sv = np.linalg.svd(kkt, compute_uv=False)
        ok = sv[:, -1] > SINGULAR_TOL * np.maximum(sv[:, 0], 1.0)
        if not ok.any():
            continue
        sol = np.linalg.solve(kkt[ok], rhs[ok][..., None])[..., 0]
        t, lam = sol[:, :dim], sol[:, dim:]
        feas = np.all(t @ G.T <= h + FEAS_TOL, axis=1) & np.all(lam >= -MULT_TOL, axis=1)
        for idx in np.flatnonzero(feas):
            tt = t[idx]
            obj = 0.5 * tt @ H @ tt + f @ tt
            if best is None or obj < best[0] - TIE_TOL:
                best = (obj, tt, tuple(int(j) for j in S[ok][idx]), lam[idx])
    if best is None:
        raise Infeasible("no active set yields a feasible KKT point")
    _, t, active, lam = best
    v = v0 + Z @ t
    multipliers = np.zeros(rows)
    multipliers[list(active)] = lam
    return OracleResult(v, qp.objective(v), active, multipliers)


def solve_problem(problem: MpcProblem, max_ineq: int = MAX_INEQ) -> OracleResult:
    """Condense, enumerate and roll the optimum back out to trajectories."""
    result = solve_active_set_enum(condense(problem), max_ineq)
    result.x_traj, result.u_traj = rollout(problem, result.v)
    return result


def compare(solution, problem: MpcProblem, oracle_result: OracleResult) -> dict:
    """Objective gap, constraint violation and input sup-norm gap."""
    J_solver = eval_objective(problem, solution.x_traj, solution.u_traj)
    J_oracle = oracle_result.objective
    u_oracle = oracle_result.v.reshape(problem.N - 1, problem.m)
    return {
        "objective_solver": J_solver,
        "objective_oracle": J_oracle,
        "objective_gap_rel": abs(J_solver - J_oracle) / max(1.0, abs(J_oracle)),
        "max_violation": constraint_violation(problem, solution.x_traj, solution.u_traj),
        "sup_norm_gap": float(np.max(np.abs(solution.u_traj - u_oracle), initial=0.0)),
    }
