import numpy as np
import pytest
from scipy.optimize import minimize

from riccati_admm.cache import build_cache
from riccati_admm.oracle import (DenseQp, Infeasible, TooLarge, compare, condense,
                                 prediction_matrices, rollout, solve_active_set_enum,
                                 solve_problem)
from riccati_admm.problem import (ConstraintSet, CostSpec, HalfSpace, LtiModel, MpcProblem,
                                  eval_objective)
from riccati_admm.solver import Settings, Status, solve

from conftest import double_integrator, random_small_problem


def qp(H, f, G=None, h=None, E=None, e=None):
    H = np.atleast_2d(np.asarray(H, float))
    d = H.shape[0]
    G = np.zeros((0, d)) if G is None else np.atleast_2d(np.asarray(G, float))
    h = np.zeros(0) if h is None else np.asarray(h, float)
    E = np.zeros((0, d)) if E is None else np.atleast_2d(np.asarray(E, float))
    e = np.zeros(0) if e is None else np.asarray(e, float)
    return DenseQp(H, np.asarray(f, float), 0.0, G, h, E, e)


def test_scalar_clipped():
    r = solve_active_set_enum(qp([[1.0]], [-1.0], [[1.0]], [0.5]))
    np.testing.assert_allclose(r.v, [0.5])
    assert r.active == (0,)


def test_scalar_unconstrained():
    r = solve_active_set_enum(qp([[1.0]], [-1.0]))
    np.testing.assert_allclose(r.v, [1.0])
    assert abs(r.objective + 0.5) <= 1e-15


def test_two_variable_example():
    r = solve_active_set_enum(qp(np.eye(2), [-2.0, -2.0], [[1, 0], [0, 1], [1, 1]], [1, 1, 1.5]))
    np.testing.assert_allclose(r.v, [0.75, 0.75], atol=1e-14)
    assert abs(r.objective + 2.4375) <= 1e-14
    assert r.active == (2,)


def test_too_large():
    with pytest.raises(TooLarge):
        solve_active_set_enum(qp([[1.0]], [0.0], np.ones((15, 1)), np.ones(15)))


def test_infeasible():
    with pytest.raises(Infeasible):
        solve_active_set_enum(qp([[1.0]], [0.0], [[1.0], [-1.0]], [-1.0, -1.0]))


def test_equality_rows_restrict():
    # min |v|^2 / 2 s.t. v1 + v2 = 1 -> (0.5, 0.5)
    r = solve_active_set_enum(qp(np.eye(2), [0.0, 0.0], E=[[1.0, 1.0]], e=[1.0]))
    np.testing.assert_allclose(r.v, [0.5, 0.5], atol=1e-14)


def _random_qp(rng, d, rows):
    M = rng.standard_normal((d, d))
    H = M @ M.T + 0.5 * np.eye(d)
    return qp(H, rng.standard_normal(d) * 3, rng.standard_normal((rows, d)),
              rng.uniform(0.1, 1.0, rows))


def test_matches_general_nlp_solver():
    rng = np.random.default_rng(0)
    for _ in range(30):
        q = _random_qp(rng, 3, 6)
        r = solve_active_set_enum(q)
        cons = {"type": "ineq", "fun": lambda v: q.h - q.G @ v, "jac": lambda v: -q.G}
        ref = minimize(q.objective, np.zeros(3), jac=lambda v: q.H @ v + q.f,
                       constraints=[cons], method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert r.objective <= ref.fun + 1e-8
        assert abs(r.objective - ref.fun) <= 1e-6 * max(1.0, abs(ref.fun))


def test_kkt_certificate():
    rng = np.random.default_rng(1)
    for _ in range(30):
        q = _random_qp(rng, 3, 5)
        r = solve_active_set_enum(q)
        lam = r.multipliers
        assert lam.min() >= -1e-10
        slack = q.h - q.G @ r.v
        assert np.abs(lam * slack).max() <= 1e-8
        np.testing.assert_allclose(q.H @ r.v + q.f + q.G.T @ lam, 0.0, atol=1e-8)


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = _random_qp(rng, 3, 6)
        perm = rng.permutation(6)
        r1 = solve_active_set_enum(q)
        r2 = solve_active_set_enum(qp(q.H, q.f, q.G[perm], q.h[perm]))
        np.testing.assert_allclose(r1.v, r2.v, atol=1e-10)
        assert sorted(perm[list(r2.active)]) == sorted(r1.active)


# condensing -------------------------------------------------------------------------

def test_condense_single_input_block():
    model = double_integrator()
    Qf = np.diag([2.0, 3.0])
    p = MpcProblem(model, CostSpec(np.eye(2), np.array([[0.5]]), Qf), 2, [1.0, -1.0])
    d = condense(p)
    B, A, x0 = model.B, model.A, p.x_init
    np.testing.assert_allclose(d.H, 0.5 + B.T @ Qf @ B, rtol=1e-14)
    np.testing.assert_allclose(d.f, B.T @ Qf @ A @ x0, rtol=1e-14)


def test_prediction_matrices_match_rollout():
    rng = np.random.default_rng(3)
    p = random_small_problem(rng, 3, 2, 6)
    Sx, Su = prediction_matrices(p.model.A, p.model.B, 6)
    v = rng.standard_normal(10)
    x, _ = rollout(p, v)
    np.testing.assert_allclose(Sx @ p.x_init + Su @ v, x.ravel(), atol=1e-12)


def test_condensed_objective_matches():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = random_small_problem(rng, 3, 2, 5)
        d = condense(p)
        v = rng.standard_normal(d.dim)
        J = eval_objective(p, *rollout(p, v))
        assert abs(J - d.objective(v)) <= 1e-10 * max(1.0, abs(J))


def test_unconstrained_matches_solver():
    rng = np.random.default_rng(5)
    p = random_small_problem(rng, 4, 2, 6)
    cache = build_cache(p.model, p.cost, 1e-10, 1)
    sol = solve(p, cache)
    r = solve_problem(p.with_terminal_cost(cache.entries[0].terminal_cost))
    np.testing.assert_allclose(sol.x_traj, r.x_traj, atol=1e-8)
    np.testing.assert_allclose(sol.u_traj, r.u_traj, atol=1e-8)


def test_plane_becomes_equality_row():
    a = np.array([1.0, 0.0])
    p = MpcProblem(double_integrator(), CostSpec(np.eye(2), np.eye(1), np.eye(2)), 3, [1.0, 0.0],
                   ConstraintSet(state_planes=[[], [], [HalfSpace(a, 0.9)]]))
    r = solve_problem(p)
    assert abs(r.x_traj[2, 0] - 0.9) <= 1e-10


def test_initial_state_rows_are_skipped():
    # the fixed state violates the half-space; only later knots are constrained
    h = HalfSpace([1.0, 0.0], 0.5)
    p = MpcProblem(double_integrator(), CostSpec(np.eye(2), np.eye(1), np.eye(2)), 3, [1.0, 0.0],
                   ConstraintSet(state_halfspaces=[[h]] * 3, input_box=([-100.0], [100.0])))
    r = solve_problem(p)
    assert (r.x_traj[1:, 0] <= 0.5 + 1e-10).all()


# compare ----------------------------------------------------------------------------

def _box_problem():
    return MpcProblem(double_integrator(), CostSpec(np.eye(2), np.eye(1), np.eye(2)), 4,
                      [1.0, 0.0], ConstraintSet(input_box=([-0.5], [0.5])))


def test_compare_tight_solver():
    p = _box_problem()
    cache = build_cache(p.model, p.cost)
    sol = solve(p, cache, Settings(tol_primal=1e-10, tol_dual=1e-10, max_iters=100000))
    target = p.with_terminal_cost(cache.entries[sol.rho_index].terminal_cost)
    rep = compare(sol, target, solve_problem(target))
    assert rep["objective_gap_rel"] <= 1e-6


def test_compare_identical_is_zero():
    p = _box_problem()
    r = solve_problem(p)

    class Same:
        x_traj, u_traj = r.x_traj, r.u_traj

    rep = compare(Same, p, r)
    assert rep["objective_gap_rel"] == 0 and rep["sup_norm_gap"] == 0
    assert rep["max_violation"] <= 1e-12


def test_compare_after_one_iteration_is_finite():
    p = _box_problem()
    sol = solve(p, build_cache(p.model, p.cost), Settings(max_iters=1))
    assert sol.status is Status.MAX_ITERS
    rep = compare(sol, p, solve_problem(p))
    assert all(np.isfinite(v) for v in rep.values())


def test_scalar_model_condense():
    p = MpcProblem(LtiModel([[1.0]], [[1.0]]), CostSpec([[1.0]], [[1.0]], [[1.0]]), 3, [1.0])
    d = condense(p)
    assert d.H.shape == (2, 2) and np.allclose(d.H, d.H.T)
