"""Receding-horizon quadrotor simulations around a hover linearization.

State (12): position, attitude as a rotation vector, linear velocity,
angular velocity. Input (4): normalized motor thrusts in [0, 1]. The solver
works on the deviation du = u - u_hover, so the input box is
[-u_hover, 1 - u_hover]. The plant is the same linear model with additive
Gaussian process noise and a [0, 1] clip on the applied thrusts.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from .cache import SolverCache, build_cache
from .problem import ConstraintSet, CostSpec, HalfSpace, LtiModel, MpcProblem
from .projections import linearize_sphere_obstacle
from .solver import Settings, Solution, Status, solve

GRAVITY = 9.81
POS, ATT, VEL, OMEGA = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)

# Crazyflie-class defaults: 27 g, 46 mm arms, 0.15 N peak thrust per motor
CF_MASS = 0.027
CF_INERTIA = (1.66e-5, 1.66e-5, 2.93e-5)
CF_ARM = 0.046
CF_THRUST = 0.15
CF_YAW_COEFF = 0.006


@dataclass
class QuadModel(LtiModel):
    u_hover: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        super().__post_init__()
        self.u_hover = np.asarray(self.u_hover, dtype=float)

    @property
    def du_box(self):
        return -self.u_hover, 1.0 - self.u_hover

    def plant_step(self, x, u_applied, noise=None):
        x_next = self.A @ x + self.B @ (u_applied - self.u_hover)
        return x_next if noise is None else x_next + noise


def hover_linearized_model(mass=CF_MASS, inertia_diag=CF_INERTIA, arm_length=CF_ARM,
                           thrust_coeff=CF_THRUST, dt=0.002, yaw_coeff=CF_YAW_COEFF) -> QuadModel:
    """Zero-order-hold discretization of the hover linearization.

    ``thrust_coeff`` is the thrust of one motor at full command (N) and
    ``yaw_coeff`` the reaction torque per unit thrust (m). Motors sit on an
    X frame at (+-L/sqrt2, +-L/sqrt2) with alternating spin directions.
    """
    if min(mass, arm_length, thrust_coeff, dt, *inertia_diag) <= 0:
        raise ValueError("physical parameters must be positive")
    s = arm_length / np.sqrt(2.0)
    motor_xy = np.array([[s, -s], [-s, -s], [-s, s], [s, s]])
    spin = np.array([-1.0, 1.0, -1.0, 1.0])

    Ac = np.zeros((12, 12))
    Ac[POS, VEL] = np.eye(3)
    Ac[ATT, OMEGA] = np.eye(3)
    # small rotation tilts the thrust vector: accel = g * (theta_y, -theta_x, 0)
    Ac[6, 4] = GRAVITY
    Ac[7, 3] = -GRAVITY

    Bc = np.zeros((12, 4))
    Bc[8, :] = thrust_coeff / mass
    torque = np.vstack([motor_xy[:, 1], -motor_xy[:, 0], yaw_coeff * spin]) * thrust_coeff
    Bc[OMEGA, :] = torque / np.asarray(inertia_diag, dtype=float)[:, None]

    M = np.zeros((16, 16))
    M[:12, :12] = Ac * dt
    M[:12, 12:] = Bc * dt
    E = scipy.linalg.expm(M)
    u_hover = np.full(4, mass * GRAVITY / (4 * thrust_coeff))
    return QuadModel(E[:12, :12], E[:12, 12:], dt, u_hover=u_hover)


def figure_eight_reference(amplitude_x, amplitude_y, period_s, dt, steps, z0=0.0, t0=0.0):
    """Lissajous figure eight, shape (steps, 12).

    x = Ax sin(2 pi t / T), y = Ay sin(4 pi t / T), z = z0, with analytic
    velocities; attitude and rate references are zero.
    """
    if not period_s > 0:
        raise ValueError("period must be positive")
    t = t0 + dt * np.arange(steps)
    w = 2 * np.pi / period_s
    ref = np.zeros((steps, 12))
    ref[:, 0] = amplitude_x * np.sin(w * t)
    ref[:, 1] = amplitude_y * np.sin(2 * w * t)
    ref[:, 2] = z0
    ref[:, 6] = amplitude_x * w * np.cos(w * t)
    ref[:, 7] = 2 * amplitude_y * w * np.cos(2 * w * t)
    return ref


def figure_eight_period(amplitude_x, amplitude_y, peak_speed):
    """Period giving ``peak_speed`` at the figure-eight crossing point."""
    return 2 * np.pi * np.hypot(amplitude_x, 2 * amplitude_y) / peak_speed


# --------------------------------------------------------------------------- #
# Scenarios
# --------------------------------------------------------------------------- #

@dataclass
class ScenarioConfig:
    name: str = "hover"
    control_rate: float = 500.0
    N: int = 15
    steps: int = 1000
    reference: dict = field(default_factory=lambda: {"type": "hover"})
    x_init: Optional[list] = None
    obstacle: Optional[dict] = None
    plane: bool = False
    noise_std: dict = field(default_factory=lambda: {"vel": 1e-3})
    seed: int = 0
    motion_scale: float = 1.0
    Q_diag: list = field(default_factory=lambda: [1e4] * 3 + [0.1] * 3 + [1.0] * 3 + [0.01] * 3)
    R_diag: list = field(default_factory=lambda: [1.0] * 4)
    rho: float = 1.0
    ladder_size: int = 5
    ladder_factor: float = 5.0
    tol_primal: float = 1e-4
    tol_dual: float = 1e-3
    max_iters: int = 4000
    predict_obstacle: bool = True
    plane_from_knot: int = 5

    def __post_init__(self):
        if not self.control_rate > 0:
            raise ValueError("control_rate must be positive")
        if self.N < 2 or self.steps < 1:
            raise ValueError("need N >= 2 and steps >= 1")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_scenario(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def figure_eight_scenario(**kw) -> ScenarioConfig:
    """500 Hz, N = 15 figure eight peaking at 1.5 m/s."""
    T = figure_eight_period(0.5, 0.25, 1.5)
    base = dict(name="figure_eight", control_rate=500.0, N=15, steps=int(2 * T * 500),
                reference={"type": "figure_eight", "amplitude_x": 0.5, "amplitude_y": 0.25,
                           "period_s": T})
    base.update(kw)
    return ScenarioConfig(**base)


def obstacle_scenario(**kw) -> ScenarioConfig:
    """100 Hz, N = 20 hover in the plane x = 0 under a swinging ball.

    The ball's lowest point passes 5 cm above the hover point, so the
    vehicle has to duck. Each step gets a real-time budget of 100 ADMM
    iterations starting from rho = 5; tol_primal 1e-3 is well inside the
    5 cm clearance scale.
    """
    base = dict(name="obstacle", control_rate=100.0, N=20, steps=3000, plane=True,
                reference={"type": "hover"},
                obstacle={"type": "pendulum", "pivot": [0.0, 0.0, 1.05], "length": 1.0,
                          "amplitude_rad": 0.5, "period_s": 4.0, "radius": 0.15},
                rho=5.0, tol_primal=1e-3, max_iters=100)
    base.update(kw)
    return ScenarioConfig(**base)


def recovery_scenario(**kw) -> ScenarioConfig:
    """Hover recovery from a 90 degree roll error.

    The large initial error keeps the inputs saturated for many steps; a
    stiffer rho ladder converges faster there, and tol_primal 1e-6 bounds
    the commanded input overshoot of the box.
    """
    x0 = [0.0] * 12
    x0[3] = np.pi / 2
    base = dict(name="recovery", control_rate=500.0, N=15, steps=500, x_init=x0,
                reference={"type": "hover"}, rho=125.0, ladder_size=3, tol_primal=1e-6)
    base.update(kw)
    return ScenarioConfig(**base)


def obstacle_center(spec: dict, t):
    """Obstacle center(s) at time(s) ``t``; returns shape (..., 3)."""
    t = np.asarray(t, dtype=float)
    kind = spec.get("type", "static")
    if kind == "static":
        return np.broadcast_to(np.asarray(spec["center"], dtype=float), t.shape + (3,)).copy()
    if kind == "pendulum":
        # swings in the x-z plane about the pivot
        # starts at full deflection so the ball is clear of the vehicle at t = 0
        theta = spec["amplitude_rad"] * np.cos(2 * np.pi * t / spec["period_s"])
        pivot = np.asarray(spec["pivot"], dtype=float)
        L = spec["length"]
        off = np.stack([L * np.sin(theta), np.zeros_like(theta), -L * np.cos(theta)], axis=-1)
        return pivot + off
    raise ValueError(f"unknown obstacle type {kind!r}")


def reference_window(scenario: ScenarioConfig, step: int, length: int) -> np.ndarray:
    spec = scenario.reference
    kind = spec.get("type", "hover")
    if kind == "hover":
        ref = np.zeros((length, 12))
        ref[:, POS] = spec.get("position", [0.0, 0.0, 0.0])
        return ref
    if kind == "figure_eight":
        return figure_eight_reference(spec["amplitude_x"], spec["amplitude_y"], spec["period_s"],
                                      scenario.dt, length, z0=spec.get("z0", 0.0),
                                      t0=step * scenario.dt)
    raise ValueError(f"unknown reference type {kind!r}")


def scenario_model(scenario: ScenarioConfig) -> QuadModel:
    return hover_linearized_model(dt=scenario.dt)


def scenario_cost(scenario: ScenarioConfig) -> CostSpec:
    Q = np.diag(np.asarray(scenario.Q_diag, dtype=float))
    return CostSpec(Q, np.diag(np.asarray(scenario.R_diag, dtype=float)), Q)


def scenario_cache(model: QuadModel, scenario: ScenarioConfig) -> SolverCache:
    return build_cache(model, scenario_cost(scenario), scenario.rho, scenario.ladder_size,
                       scenario.ladder_factor)


def scenario_settings(scenario: ScenarioConfig) -> Settings:
    return Settings(tol_primal=scenario.tol_primal, tol_dual=scenario.tol_dual,
                    max_iters=scenario.max_iters)


# --------------------------------------------------------------------------- #
# Episodes
# --------------------------------------------------------------------------- #

LOG_COLUMNS = (["step", "t"] + [f"x_{i}" for i in range(12)] + [f"ref_{i}" for i in range(3)]
               + [f"u_cmd_{j}" for j in range(4)] + [f"u_app_{j}" for j in range(4)]
               + ["status", "iters", "r_primal", "r_dual", "rho",
                  "obstacle_distance", "plane_deviation"])


@dataclass
class EpisodeLog:
    dt: float
    states: np.ndarray
    pos_ref: np.ndarray
    u_cmd: np.ndarray
    u_applied: np.ndarray
    status: list
    iters: np.ndarray
    r_primal: np.ndarray
    r_dual: np.ndarray
    rho: np.ndarray
    obstacle_distance: Optional[np.ndarray] = None
    obstacle_radius: Optional[float] = None
    plane_deviation: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.states.shape[0]


def _step_constraints(model: QuadModel, scenario: ScenarioConfig, x, t, N) -> ConstraintSet:
    halfspaces = [[] for _ in range(N)]
    planes = [[] for _ in range(N)]
    if scenario.obstacle is not None:
        spec = scenario.obstacle
        times = t + scenario.dt * np.arange(N) if scenario.predict_obstacle else np.full(N, t)
        centers = obstacle_center(spec, times)
        for k in range(N):
            halfspaces[k].append(linearize_sphere_obstacle(x[POS], centers[k], spec["radius"], n=12))
    if scenario.plane:
        a = np.zeros(12)
        a[0] = 1.0
        # early knots cannot reach the plane against velocity noise (the input
        # acts on position only through the fourth-order attitude chain)
        for k in range(scenario.plane_from_knot, N):
            planes[k].append(HalfSpace(a, 0.0))
    return ConstraintSet(input_box=model.du_box, state_halfspaces=halfspaces, state_planes=planes)


def _noise_vector(scenario: ScenarioConfig, rng) -> np.ndarray:
    std = np.zeros(12)
    for block, sl in (("pos", POS), ("att", ATT), ("vel", VEL), ("omega", OMEGA)):
        std[sl] = scenario.noise_std.get(block, 0.0)
    return rng.standard_normal(12) * std


def simulate_episode(model: QuadModel, scenario: ScenarioConfig, cache: SolverCache,
                     settings: Optional[Settings] = None) -> EpisodeLog:
    settings = settings or scenario_settings(scenario)
    rng = np.random.default_rng(scenario.seed)
    N, steps = scenario.N, scenario.steps
    cost = scenario_cost(scenario)
    if scenario.x_init is None:
        x = reference_window(scenario, 0, 1)[0]
    else:
        x = np.asarray(scenario.x_init, dtype=float)

    states = np.zeros((steps, 12))
    pos_ref = np.zeros((steps, 3))
    u_cmd = np.zeros((steps, 4))
    u_app = np.zeros((steps, 4))
    iters = np.zeros(steps, dtype=int)
    rp, rd, rho = np.zeros(steps), np.zeros(steps), np.zeros(steps)
    status = []
    obs_dist = np.zeros(steps) if scenario.obstacle is not None else None
    plane_dev = np.zeros(steps) if scenario.plane else None

    warm: Optional[Solution] = None
    for i in range(steps):
        t = i * scenario.dt
        x_ref = reference_window(scenario, i, N)
        problem = MpcProblem(model, cost, N, x, _step_constraints(model, scenario, x, t, N),
                             x_ref=x_ref)
        sol = solve(problem, cache, settings, warm=warm)
        warm = sol

        states[i] = x
        pos_ref[i] = x_ref[0, POS]
        u_cmd[i] = model.u_hover + sol.u_traj[0]
        u_app[i] = np.clip(u_cmd[i], 0.0, 1.0)
        iters[i] = sol.iters
        rp[i], rd[i], rho[i] = sol.primal_residual, sol.dual_residual, sol.rho_final
        status.append(sol.status.value)
        if obs_dist is not None:
            obs_dist[i] = np.linalg.norm(x[POS] - obstacle_center(scenario.obstacle, t))
        if plane_dev is not None:
            plane_dev[i] = abs(x[0])

        x = model.plant_step(x, u_app[i], _noise_vector(scenario, rng))

    radius = scenario.obstacle["radius"] if scenario.obstacle is not None else None
    return EpisodeLog(scenario.dt, states, pos_ref, u_cmd, u_app, status, iters, rp, rd, rho,
                      obs_dist, radius, plane_dev)


def episode_metrics(log: EpisodeLog) -> dict:
    if len(log) == 0:
        raise ValueError("empty episode log")
    err = np.linalg.norm(log.states[:, POS] - log.pos_ref, axis=1)
    metrics = {
        "tracking_rmse": float(np.sqrt(np.mean(err ** 2))),
        "max_pos_error": float(err.max()),
        "max_input": float(log.u_cmd.max()),
        "min_input": float(log.u_cmd.min()),
        "iters_max": int(log.iters.max()),
        "iters_median": float(np.median(log.iters)),
        "max_iters_count": int(sum(s == Status.MAX_ITERS.value for s in log.status)),
    }
    if log.obstacle_distance is not None:
        metrics["min_obstacle_distance"] = float(log.obstacle_distance.min())
    if log.plane_deviation is not None:
        metrics["max_plane_deviation"] = float(log.plane_deviation.max())
    return metrics


def _fmt(v) -> str:
    return repr(float(v))


def episode_to_csv(log: EpisodeLog) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(LOG_COLUMNS)
    for i in range(len(log)):
        row = [i, _fmt(i * log.dt)]
        row += [_fmt(v) for v in log.states[i]] + [_fmt(v) for v in log.pos_ref[i]]
        row += [_fmt(v) for v in log.u_cmd[i]] + [_fmt(v) for v in log.u_applied[i]]
        row += [log.status[i], int(log.iters[i]), _fmt(log.r_primal[i]), _fmt(log.r_dual[i]),
                _fmt(log.rho[i])]
        row.append("" if log.obstacle_distance is None else _fmt(log.obstacle_distance[i]))
        row.append("" if log.plane_deviation is None else _fmt(log.plane_deviation[i]))
        wr.writerow(row)
    return buf.getvalue()


def metrics_to_text(metrics: dict) -> str:
    return "".join(f"{k}={v!r}\n" for k, v in metrics.items())


def write_episode(log: EpisodeLog, out_prefix, extra: Optional[dict] = None) -> tuple:
    """Write ``<prefix>.csv`` and the ``<prefix>.metrics`` key=value sidecar.

    ``extra`` entries (e.g. the seed) are appended to the sidecar.
    """
    out_prefix = Path(out_prefix)
    csv_path = out_prefix.with_name(out_prefix.name + ".csv")
    metrics_path = out_prefix.with_name(out_prefix.name + ".metrics")
    csv_path.write_text(episode_to_csv(log), encoding="utf-8")
    metrics_path.write_text(metrics_to_text({**episode_metrics(log), **(extra or {})}),
                            encoding="utf-8")
    return csv_path, metrics_path
