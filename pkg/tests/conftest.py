import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riccati_admm.problem import ConstraintSet, CostSpec, LtiModel, MpcProblem

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def double_integrator(dt=0.1) -> LtiModel:
    return LtiModel(np.array([[1.0, dt], [0.0, 1.0]]), np.array([[0.5 * dt * dt], [dt]]), dt)


def random_small_problem(rng, n, m, N, box=None, x_scale=1.0) -> MpcProblem:
    """Random stable-ish system with diagonal costs and an optional input box."""
    from riccati_admm.bench import random_controllable_system
    model = random_controllable_system(n, m, rng.integers(2**32))
    Q = np.diag(rng.uniform(0.5, 2.0, n))
    R = np.diag(rng.uniform(0.1, 1.0, m))
    cons = ConstraintSet() if box is None else ConstraintSet(
        input_box=(np.full(m, -box), np.full(m, box)))
    return MpcProblem(model, CostSpec(Q, R, Q), N, x_scale * rng.uniform(-1, 1, n), cons)


@pytest.fixture
def di_model():
    return double_integrator()
