"""
Cached Riccati gains solve unconstrained MPC exactly
=====================================================

With no constraints and a negligible penalty, one ADMM iteration of the
cached backward/forward pass is the finite-horizon LQR solution. We check
it against the condensed QP solved by plain linear algebra.
"""

import numpy as np

from riccati_admm.bench import random_controllable_system
from riccati_admm.cache import build_cache, riccati_infinite_horizon
from riccati_admm.oracle import condense
from riccati_admm.problem import CostSpec, MpcProblem
from riccati_admm.solver import solve

# the scalar system x+ = x + u with unit weights has P = golden ratio
K, P, iters = riccati_infinite_horizon([[1.0]], [[1.0]], [[1.0]], [[1.0]])
print(f"scalar Riccati: P={P[0, 0]:.10f} K={K[0, 0]:.10f} after {iters} sweeps")

# a random 5-state, 2-input system
model = random_controllable_system(5, 2, seed=1)
cost = CostSpec(np.eye(5), 0.1 * np.eye(2), np.eye(5))
problem = MpcProblem(model, cost, N=10, x_init=np.ones(5))

# one ladder rung at rho ~ 0
cache = build_cache(model, cost, rho_base=1e-10, ladder_size=1)
sol = solve(problem, cache)
print(f"status={sol.status.value} iters={sol.iters}")

# the same problem with the cached terminal cost, condensed and solved directly
qp = condense(problem.with_terminal_cost(cache.entries[0].terminal_cost))
v = np.linalg.solve(qp.H, -qp.f)
print("max |u_admm - u_qp| =", np.abs(sol.u_traj.ravel() - v).max())
