"""
Linear MPC problem data: LTI model, quadratic costs, constraints and references.

The problem solved over a horizon of N state knot points is

    min   sum_{k=1}^{N-1} 0.5 x_k' Q x_k + q_k' x_k + 0.5 u_k' R u_k + r_k' u_k
          + 0.5 x_N' Qf x_N + q_N' x_N
    s.t.  x_{k+1} = A x_k + B u_k,   x_1 = x_init
          x_k in X_k,  u_k in U

Arrays are indexed from 0, so knot k of the formula above is row k-1.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

SYMMETRY_TOL = 1e-9
RANK_TOL = 1e-9


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {M.shape}")
    return M


def _symmetrize(M: np.ndarray, name: str) -> np.ndarray:
    if M.shape[0] != M.shape[1]:
        return M
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > SYMMETRY_TOL:
        warnings.warn(f"{name} asymmetric by {asym:.3g}; symmetrizing", stacklevel=3)
    return 0.5 * (M + M.T)


@dataclass
class LtiModel:
    """Discrete-time linear dynamics x+ = A x + B u."""

    A: np.ndarray
    B: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        self.A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        self.B = B.reshape(-1, 1) if B.ndim == 1 else _as_matrix(B, "B")
        self.dt = float(self.dt)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u


@dataclass
class CostSpec:
    """Quadratic stage and terminal costs.

    ``q`` (N rows) and ``r`` (N-1 rows) are raw linear terms. When left as
    None they are derived from the problem references, see
    :meth:`MpcProblem.linear_terms`.
    """

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    q: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Q = _symmetrize(_as_matrix(self.Q, "Q"), "Q")
        self.R = _symmetrize(_as_matrix(self.R, "R"), "R")
        self.Qf = _symmetrize(_as_matrix(self.Qf, "Qf"), "Qf")
        if self.q is not None:
            self.q = np.asarray(self.q, dtype=float)
        if self.r is not None:
            self.r = np.asarray(self.r, dtype=float)


@dataclass(frozen=True)
class HalfSpace:
    """State inequality a . x <= b."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).ravel())
        object.__setattr__(self, "b", float(self.b))

    def residual(self, x) -> float:
        return float(self.a @ x - self.b)


@dataclass
class ConstraintSet:
    """State and input constraints.

    ``state_halfspaces`` and ``state_planes`` hold one list per knot point.
    A plane is stored as a :class:`HalfSpace` but means a . x == b.
    """

    input_box: Optional[tuple] = None
    state_box: Optional[tuple] = None
    state_halfspaces: list = field(default_factory=list)
    state_planes: list = field(default_factory=list)

    def __post_init__(self):
        if self.input_box is not None:
            self.input_box = tuple(np.asarray(v, dtype=float).ravel() for v in self.input_box)
        if self.state_box is not None:
            self.state_box = tuple(np.asarray(v, dtype=float).ravel() for v in self.state_box)
        self.state_halfspaces = [list(step) for step in self.state_halfspaces]
        self.state_planes = [list(step) for step in self.state_planes]

    def halfspaces_at(self, k: int) -> list:
        return self.state_halfspaces[k] if k < len(self.state_halfspaces) else []

    def planes_at(self, k: int) -> list:
        return self.state_planes[k] if k < len(self.state_planes) else []

    @property
    def is_empty(self) -> bool:
        return (self.input_box is None and self.state_box is None
                and not any(self.state_halfspaces) and not any(self.state_planes))


@dataclass
class MpcProblem:
    model: LtiModel
    cost: CostSpec
    N: int
    x_init: np.ndarray
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    x_ref: Optional[np.ndarray] = None
    u_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        self.N = int(self.N)
        self.x_init = np.asarray(self.x_init, dtype=float).ravel()
        if self.x_ref is not None:
            self.x_ref = np.asarray(self.x_ref, dtype=float)
            if self.x_ref.ndim == 1:
                self.x_ref = self.x_ref.reshape(-1, self.model.n)
        if self.u_ref is not None:
            self.u_ref = np.asarray(self.u_ref, dtype=float)
            if self.u_ref.ndim == 1:
                self.u_ref = self.u_ref.reshape(-1, self.model.m)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    def linear_terms(self, terminal_hessian: Optional[np.ndarray] = None):
        """Return the (N, n) and (N-1, m) linear cost arrays.

        Raw ``cost.q``/``cost.r`` win. Otherwise tracking terms
        q_k = -Q x_ref_k, q_N = -Qf x_ref_N and r_k = -R u_ref_k are used,
        zero when no reference is given. ``terminal_hessian`` replaces Qf in
        the derived terminal term.
        """
        n, m, N = self.n, self.m, self.N
        Qf = self.cost.Qf if terminal_hessian is None else terminal_hessian
        if self.cost.q is not None:
            q = np.array(self.cost.q, dtype=float).reshape(N, n)
        elif self.x_ref is not None:
            q = -self.x_ref @ self.cost.Q.T
            q[-1] = -Qf @ self.x_ref[-1]
        else:
            q = np.zeros((N, n))
        if self.cost.r is not None:
            r = np.array(self.cost.r, dtype=float).reshape(N - 1, m)
        elif self.u_ref is not None:
            r = -self.u_ref @ self.cost.R.T
        else:
            r = np.zeros((N - 1, m))
        return q, r

    def with_terminal_cost(self, Qf: np.ndarray) -> "MpcProblem":
        return replace(self, cost=replace(self.cost, Qf=np.asarray(Qf, dtype=float)))


# --------------------------------------------------------------------------- #
# Checks and accounting
# --------------------------------------------------------------------------- #

def _is_psd(M: np.ndarray, strict: bool) -> bool:
    if not np.all(np.isfinite(M)) or M.shape[0] != M.shape[1]:
        return False
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL:
        return False
    eig_min = np.linalg.eigvalsh(M).min()
    scale = max(1.0, np.abs(M).max())
    return eig_min > 0 if strict else eig_min >= -1e-12 * scale


def validate(problem: MpcProblem) -> list[str]:
    """Return every invariant violation found; an empty list means ok."""
    out: list[str] = []
    model, cost = problem.model, problem.cost
    A, B = model.A, model.B
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        out.append(f"A not square: shape {A.shape}")
    if B.shape[0] != n:
        out.append(f"B has {B.shape[0]} rows, expected {n}")
    m = B.shape[1]
    if n < 1 or m < 1:
        out.append("state and input dimensions must be >= 1")
    if not model.dt > 0:
        out.append(f"dt must be positive, got {model.dt}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        out.append("model contains non-finite entries")

    for name, M, dim, strict in (("Q", cost.Q, n, False), ("Qf", cost.Qf, n, False),
                                 ("R", cost.R, m, True)):
        if M.shape != (dim, dim):
            out.append(f"{name} has shape {M.shape}, expected {(dim, dim)}")
        elif not _is_psd(M, strict):
            kind = "positive definite" if strict else "positive semidefinite"
            out.append(f"{name} not {kind}")

    N = problem.N
    if N < 2:
        out.append(f"horizon N must be >= 2, got {N}")
    if problem.x_init.shape != (n,):
        out.append(f"x_init has shape {problem.x_init.shape}, expected ({n},)")
    elif not np.all(np.isfinite(problem.x_init)):
        out.append("x_init not finite")
    if problem.x_ref is not None and problem.x_ref.shape != (N, n):
        out.append(f"reference length mismatch: x_ref shape {problem.x_ref.shape}, expected {(N, n)}")
    if problem.u_ref is not None and problem.u_ref.shape != (N - 1, m):
        out.append(f"reference length mismatch: u_ref shape {problem.u_ref.shape}, expected {(N - 1, m)}")
    if cost.q is not None and cost.q.size != N * n:
        out.append(f"linear cost q has {cost.q.size} entries, expected {N * n}")
    if cost.r is not None and cost.r.size != (N - 1) * m:
        out.append(f"linear cost r has {cost.r.size} entries, expected {(N - 1) * m}")

    c = problem.constraints
    for name, box, dim in (("input_box", c.input_box, m), ("state_box", c.state_box, n)):
        if box is None:
            continue
        lo, hi = box
        if lo.shape != (dim,) or hi.shape != (dim,):
            out.append(f"{name} bounds must have length {dim}")
        elif np.any(lo > hi):
            out.append(f"{name} has lo > hi")
        elif np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            out.append(f"{name} contains NaN")
    for name, lists in (("state_halfspaces", c.state_halfspaces), ("state_planes", c.state_planes)):
        if lists and len(lists) != N:
            out.append(f"{name} has {len(lists)} step lists, expected {N}")
        for k, step in enumerate(lists):
            for h in step:
                if h.a.shape != (n,):
                    out.append(f"{name}[{k}] normal has length {h.a.size}, expected {n}")
                elif not np.linalg.norm(h.a) > 0:
                    out.append(f"{name}[{k}] has a zero normal")
                elif not (np.all(np.isfinite(h.a)) and np.isfinite(h.b)):
                    out.append(f"{name}[{k}] not finite")
    return out


def controllability_rank(A, B, tol: float = RANK_TOL) -> int:
    """Numerical rank of [B, AB, ..., A^{n-1} B].

    Singular values above ``tol`` times the largest one count.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    s = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def problem_size(problem: MpcProblem) -> dict:
    """Decision variable and constraint counts of the equivalent sparse QP."""
    n, m, N = problem.n, problem.m, problem.N
    c = problem.constraints
    num_ineq = 0
    if c.input_box is not None:
        num_ineq += 2 * m * (N - 1)
    if c.state_box is not None:
        lo, hi = c.state_box
        num_ineq += N * int(np.sum(np.isfinite(lo)) + np.sum(np.isfinite(hi)))
    num_ineq += sum(len(step) for step in c.state_halfspaces)
    return {
        "num_vars": n * N + m * (N - 1),
        "num_eq": n * (N - 1) + sum(len(step) for step in c.state_planes),
        "num_ineq": num_ineq,
    }


def eval_objective(problem: MpcProblem, x_traj, u_traj, terminal_hessian=None) -> float:
    x = np.asarray(x_traj, dtype=float).reshape(problem.N, problem.n)
    u = np.asarray(u_traj, dtype=float).reshape(problem.N - 1, problem.m)
    Q, R = problem.cost.Q, problem.cost.R
    Qf = problem.cost.Qf if terminal_hessian is None else terminal_hessian
    q, r = problem.linear_terms(terminal_hessian)
    xs = x[:-1]
    J = 0.5 * np.einsum("ki,ij,kj->", xs, Q, xs) + np.sum(q[:-1] * xs)
    J += 0.5 * np.einsum("ki,ij,kj->", u, R, u) + np.sum(r * u)
    J += 0.5 * x[-1] @ Qf @ x[-1] + q[-1] @ x[-1]
    return float(J)


def constraint_violation(problem: MpcProblem, x_traj, u_traj) -> float:
    """Largest violation of any inequality or plane over the trajectory.

    The initial state is data, not a decision, so knot 0 carries no state
    constraint here, in the solver or in the oracle.
    """
    x = np.asarray(x_traj, dtype=float).reshape(problem.N, problem.n)
    u = np.asarray(u_traj, dtype=float).reshape(problem.N - 1, problem.m)
    c = problem.constraints
    worst = 0.0
    if c.input_box is not None:
        lo, hi = c.input_box
        worst = max(worst, np.max(lo - u, initial=0.0), np.max(u - hi, initial=0.0))
    if c.state_box is not None:
        lo, hi = c.state_box
        worst = max(worst, np.max(lo - x[1:], initial=0.0), np.max(x[1:] - hi, initial=0.0))
    for k in range(1, problem.N):
        for h in c.halfspaces_at(k):
            worst = max(worst, h.residual(x[k]))
        for h in c.planes_at(k):
            worst = max(worst, abs(h.residual(x[k])))
    return float(worst)


# --------------------------------------------------------------------------- #
# JSON problem files
# --------------------------------------------------------------------------- #

class ProblemFileError(ValueError):
    """Problem document is unreadable or structurally ill-formed."""


def _halfspace_lists(raw, N):
    if raw is None:
        return []
    return [[HalfSpace(h["a"], h["b"]) for h in step] for step in raw]


def problem_from_dict(d: dict) -> MpcProblem:
    try:
        n, m, N = int(d["n"]), int(d["m"]), int(d["N"])
        model = LtiModel(np.array(d["A"], dtype=float).reshape(n, n),
                         np.array(d["B"], dtype=float).reshape(n, m), float(d.get("dt", 1.0)))
        cost = CostSpec(np.array(d["Q"], dtype=float), np.array(d["R"], dtype=float),
                        np.array(d["Qf"], dtype=float), d.get("q"), d.get("r"))
        cons = d.get("constraints") or {}
        box = lambda b: None if b is None else (np.array(b["lo"], float), np.array(b["hi"], float))  # noqa: E731
        constraints = ConstraintSet(
            input_box=box(cons.get("input_box")),
            state_box=box(cons.get("state_box")),
            state_halfspaces=_halfspace_lists(cons.get("halfspaces"), N),
            state_planes=_halfspace_lists(cons.get("planes"), N),
        )
        return MpcProblem(model, cost, N, np.array(d["x_init"], dtype=float), constraints,
                          x_ref=d.get("x_ref"), u_ref=d.get("u_ref"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFileError(f"ill-formed problem document: {exc!r}") from exc


def problem_to_dict(problem: MpcProblem) -> dict:
    tolist = lambda a: None if a is None else np.asarray(a, dtype=float).tolist()  # noqa: E731
    c = problem.constraints
    box = lambda b: None if b is None else {"lo": b[0].tolist(), "hi": b[1].tolist()}  # noqa: E731
    hs = lambda lists: [[{"a": h.a.tolist(), "b": h.b} for h in step] for step in lists]  # noqa: E731
    d = {
        "n": problem.n, "m": problem.m, "N": problem.N, "dt": problem.model.dt,
        "A": tolist(problem.model.A), "B": tolist(problem.model.B),
        "Q": tolist(problem.cost.Q), "R": tolist(problem.cost.R), "Qf": tolist(problem.cost.Qf),
        "x_init": tolist(problem.x_init),
        "constraints": {},
    }
    for key, val in (("q", problem.cost.q), ("r", problem.cost.r),
                     ("x_ref", problem.x_ref), ("u_ref", problem.u_ref)):
        if val is not None:
            d[key] = tolist(val)
    if c.input_box is not None:
        d["constraints"]["input_box"] = box(c.input_box)
    if c.state_box is not None:
        d["constraints"]["state_box"] = box(c.state_box)
    if any(c.state_halfspaces):
        d["constraints"]["halfspaces"] = hs(c.state_halfspaces)
    if any(c.state_planes):
        d["constraints"]["planes"] = hs(c.state_planes)
    return d


def load_problem(path) -> MpcProblem:
    try:
        text = Path(path).read_text(encoding="utf-8")
        d = json.loads(text)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProblemFileError(f"cannot read {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ProblemFileError(f"{path}: top level must be an object")
    return problem_from_dict(d)


def save_problem(problem: MpcProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=1), encoding="utf-8")
