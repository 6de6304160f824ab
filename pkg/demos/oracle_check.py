"""
Input-constrained MPC against exhaustive active-set enumeration
================================================================

A double integrator with a tight input box. The ADMM iterate is compared
with the exact optimum found by trying every active set of the condensed QP.
"""

import numpy as np

from riccati_admm.cache import build_cache
from riccati_admm.oracle import compare, solve_problem
from riccati_admm.problem import ConstraintSet, CostSpec, LtiModel, MpcProblem
from riccati_admm.solver import solve

dt = 0.1
model = LtiModel([[1.0, dt], [0.0, 1.0]], [[0.5 * dt * dt], [dt]], dt)
problem = MpcProblem(model, CostSpec(np.eye(2), np.eye(1), np.eye(2)), N=5,
                     x_init=[1.0, 0.0], constraints=ConstraintSet(input_box=([-0.5], [0.5])))

cache = build_cache(model, problem.cost)          # five rungs around rho = 5
sol = solve(problem, cache)
print(f"ADMM: {sol.status.value} in {sol.iters} iterations, final rho {sol.rho_final}")
print("inputs:", np.round(sol.u_traj.ravel(), 4))

# the solver's effective terminal cost depends on the rung it finished on
target = problem.with_terminal_cost(cache.entries[sol.rho_index].terminal_cost)
ref = solve_problem(target)
print("oracle inputs:", np.round(ref.u_traj.ravel(), 4), "active rows:", ref.active)
for k, v in compare(sol, target, ref).items():
    print(f"  {k} = {v:.3e}")
