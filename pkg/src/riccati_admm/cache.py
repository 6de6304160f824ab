"""Offline precomputation of infinite-horizon Riccati quantities per penalty.

For each penalty ``rho`` the stage costs are augmented to Q + rho I and
R + rho I and the Riccati recursion is iterated to its fixed point. The
derived matrices let the online backward pass run with matrix-vector
products only.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .problem import CostSpec, LtiModel, controllability_rank

RICCATI_TOL = 1e-10
RICCATI_MAX_ITERS = 10_000


class NonConvergence(RuntimeError):
    def __init__(self, max_iters: int, residual: float):
        super().__init__(f"Riccati recursion did not converge in {max_iters} iterations "
                         f"(last residual {residual:.3e})")
        self.max_iters = max_iters
        self.residual = residual


@dataclass
class RhoCacheEntry:
    rho: float
    Kinf: np.ndarray
    Pinf: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    Q_aug: np.ndarray
    R_aug: np.ndarray
    riccati_iters: int = 0

    @property
    def terminal_cost(self) -> np.ndarray:
        """Terminal Hessian whose augmented version equals Pinf.

        The cached backward pass starts from Pinf, which is Qf + rho I for
        this Qf; it is the terminal cost the solver actually minimizes.
        """
        return self.Pinf - self.rho * np.eye(self.Pinf.shape[0])

    def riccati_residual(self, A, B) -> float:
        AmBK = A - B @ self.Kinf
        rhs = self.Q_aug + self.Kinf.T @ self.R_aug @ self.Kinf + AmBK.T @ self.Pinf @ AmBK
        return float(np.max(np.abs(self.Pinf - rhs)))

    @property
    def nbytes(self) -> int:
        return sum(M.nbytes for M in (self.Kinf, self.Pinf, self.C1, self.C2, self.Q_aug, self.R_aug))


@dataclass
class SolverCache:
    """Ladder of cache entries, ascending in rho.

    ``active_index`` is only the starting rung; each solve keeps its own
    index in its workspace.
    """

    A: np.ndarray
    B: np.ndarray
    entries: list = field(default_factory=list)
    active_index: int = 0

    def __post_init__(self):
        if not self.entries:
            raise ValueError("cache needs at least one entry")
        rhos = [e.rho for e in self.entries]
        if any(b <= a for a, b in zip(rhos, rhos[1:])):
            raise ValueError(f"rho ladder must be strictly ascending, got {rhos}")

    @property
    def rhos(self) -> list:
        return [e.rho for e in self.entries]

    @property
    def active(self) -> RhoCacheEntry:
        return self.entries[self.active_index]

    def index_of(self, rho: float) -> int:
        return int(np.argmin([abs(np.log(e.rho / rho)) for e in self.entries]))

    @property
    def nbytes(self) -> int:
        return self.A.nbytes + self.B.nbytes + sum(e.nbytes for e in self.entries)


def riccati_infinite_horizon(A, B, Q_aug, R_aug, tol: float = RICCATI_TOL,
                             max_iters: int = RICCATI_MAX_ITERS, check_controllable: bool = True):
    """Iterate the LQR Riccati recursion to its fixed point.

    Starts from P = Q_aug and stops once the max-abs change of P drops
    below ``tol`` and the extrapolated distance to the fixed point does
    too. Returns ``(Kinf, Pinf, iters)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q_aug = np.atleast_2d(np.asarray(Q_aug, dtype=float))
    R_aug = np.atleast_2d(np.asarray(R_aug, dtype=float))
    if check_controllable and controllability_rank(A, B) < A.shape[0]:
        warnings.warn("(A, B) is not controllable; Riccati iteration may not converge",
                      stacklevel=2)

    P = Q_aug.copy()
    residual = prev = np.inf
    for it in range(1, max_iters + 1):
        BtP = B.T @ P
        K = np.linalg.solve(R_aug + BtP @ B, BtP @ A)
        AmBK = A - B @ K
        P_next = Q_aug + K.T @ R_aug @ K + AmBK.T @ P @ AmBK
        P_next = 0.5 * (P_next + P_next.T)
        residual = np.max(np.abs(P_next - P))
        P = P_next
        if not np.isfinite(residual):
            break
        # besides a small step, require the geometric tail estimate
        # residual * c / (1 - c), c the observed contraction, below tol
        c = residual / prev if prev > 0 else 0.0
        prev = residual
        if residual < tol and (residual == 0.0 or (c < 1 and residual * c / (1 - c) < tol)):
            BtP = B.T @ P
            K = np.linalg.solve(R_aug + BtP @ B, BtP @ A)
            return K, P, it
    raise NonConvergence(max_iters, float(residual))


def build_entry(model: LtiModel, cost: CostSpec, rho: float, tol: float = RICCATI_TOL,
                max_iters: int = RICCATI_MAX_ITERS) -> RhoCacheEntry:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    A, B = model.A, model.B
    n, m = model.n, model.m
    Q_aug = cost.Q + rho * np.eye(n)
    R_aug = cost.R + rho * np.eye(m)
    Kinf, Pinf, iters = riccati_infinite_horizon(A, B, Q_aug, R_aug, tol, max_iters)
    M = R_aug + B.T @ Pinf @ B
    C1 = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), np.eye(m))
    C1 = 0.5 * (C1 + C1.T)
    C2 = np.ascontiguousarray((A - B @ Kinf).T)
    return RhoCacheEntry(float(rho), Kinf, Pinf, C1, C2, Q_aug, R_aug, iters)


def rho_ladder(rho_base: float, ladder_size: int = 5, ladder_factor: float = 5.0) -> list:
    if ladder_size < 1 or ladder_size % 2 == 0:
        raise ValueError(f"ladder_size must be a positive odd integer, got {ladder_size}")
    if not ladder_factor > 1:
        raise ValueError(f"ladder_factor must exceed 1, got {ladder_factor}")
    half = (ladder_size - 1) // 2
    return [rho_base * ladder_factor ** i for i in range(-half, half + 1)]


def build_cache(model: LtiModel, cost: CostSpec, rho_base: float = 5.0, ladder_size: int = 5,
                ladder_factor: float = 5.0, **riccati_kw) -> SolverCache:
    """Build a geometric ladder of entries centred on ``rho_base``."""
    if not rho_base > 0:
        raise ValueError(f"rho_base must be positive, got {rho_base}")
    entries = [build_entry(model, cost, rho, **riccati_kw)
               for rho in rho_ladder(rho_base, ladder_size, ladder_factor)]
    return SolverCache(model.A.copy(), model.B.copy(), entries, active_index=len(entries) // 2)
