"""Gaussian trajectory construction under a constant-velocity model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, InvalidArgumentError
from .gaussian import PoseVelocityGaussian
from .geometry import Shape

LATERAL_SPEED_STD = 1e-3
DEFAULT_SHAPE = Shape(5.0, 2.0)


@dataclass(frozen=True, eq=False)
class GaussianTrajectory:
    dt: float
    states: tuple
    shape: Shape = DEFAULT_SHAPE

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if len(self.states) == 0:
            raise InvalidArgumentError("a trajectory needs at least one state")
        for s in self.states:
            if not isinstance(s, PoseVelocityGaussian):
                raise InvalidArgumentError("trajectory states must be PoseVelocityGaussian")
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "shape", Shape(*self.shape))

    def __len__(self):
        return len(self.states)

    @property
    def horizon(self) -> float:
        return self.dt * (len(self.states) - 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    def means(self) -> np.ndarray:
        return np.array([s.mean for s in self.states])

    def covs(self) -> np.ndarray:
        return np.array([s.cov for s in self.states])


def check_same_grid(*trajs: GaussianTrajectory):
    ref = trajs[0]
    for t in trajs[1:]:
        if len(t) != len(ref) or abs(t.dt - ref.dt) > 1e-12:
            raise GridMismatchError(
                f"trajectory grids differ: {len(ref)} steps at dt={ref.dt} vs {len(t)} steps at dt={t.dt}"
            )


def cv_transition(tau: float) -> np.ndarray:
    """State transition of ``x(tau) = x(0) + v(0) tau`` on ``(x, y, theta, vx, vy)``."""
    F = np.eye(5)
    F[0, 3] = F[1, 4] = tau
    return F


def propagate_cv(initial: PoseVelocityGaussian, dt: float, horizon: float, shape=DEFAULT_SHAPE) -> GaussianTrajectory:
    """Exact propagation of a Gaussian state under constant velocity and no process noise."""
    if not dt > 0 or horizon < 0:
        raise InvalidArgumentError("need dt > 0 and horizon >= 0")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidArgumentError(f"horizon {horizon} is not a multiple of dt {dt}")
    states = []
    for k in range(steps + 1):
        F = cv_transition(k * dt)
        states.append(PoseVelocityGaussian(F @ initial.mean, F @ initial.cov @ F.T))
    return GaussianTrajectory(dt, tuple(states), shape)


def kinematic_state(
    x,
    y,
    heading,
    speed,
    position_cov,
    speed_std=0.0,
    heading_std=0.0,
    lateral_speed_std=LATERAL_SPEED_STD,
    heading_velocity_coupling=False,
) -> PoseVelocityGaussian:
    """State moving at ``speed`` along ``heading``; speed noise is longitudinal.

    The velocity covariance is ``R diag(speed_std^2, lateral_speed_std^2) R^T``
    with ``R`` the heading rotation, and the heading deviation is independent
    of everything else: it affects the footprint, not the direction of travel.

    With ``heading_velocity_coupling`` the velocity is instead
    ``speed * (cos h, sin h)`` linearized about the mean heading, so a
    heading deviation ``d`` also turns the velocity by ``speed * d``:
    ``Cov(v, theta) = speed * heading_std^2 * (-sin h, cos h)``.
    """
    c, s = math.cos(heading), math.sin(heading)
    R = np.array([[c, -s], [s, c]])
    turn = speed * np.array([-s, c]) if heading_velocity_coupling else np.zeros(2)
    var_h = heading_std**2
    sv = R @ np.diag([speed_std**2, lateral_speed_std**2]) @ R.T + var_h * np.outer(turn, turn)
    pose_cov = np.zeros((3, 3))
    pose_cov[:2, :2] = position_cov
    pose_cov[2, 2] = var_h
    cross = np.zeros((2, 3))
    cross[:, 2] = var_h * turn
    return PoseVelocityGaussian.from_blocks([x, y, heading], [speed * c, speed * s], pose_cov, sv, cross)


@dataclass(frozen=True, eq=False)
class AgentSpec:
    initial: PoseVelocityGaussian
    shape: Shape = DEFAULT_SHAPE
    name: str = ""


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    ego: AgentSpec
    obstacles: tuple = ()
    dt: float = 0.1
    horizon: float = 3.0
    orientation_enabled: bool = False
    name: str = ""
    meta: dict = field(default_factory=dict)

    def ego_trajectory(self) -> GaussianTrajectory:
        return propagate_cv(self.ego.initial, self.dt, self.horizon, self.ego.shape)

    def obstacle_trajectories(self) -> list[GaussianTrajectory]:
        return [propagate_cv(o.initial, self.dt, self.horizon, o.shape) for o in self.obstacles]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(int(round(self.horizon / self.dt)) + 1)


def table_heading(theta: float) -> float:
    """Convert a scenario-table heading to the library convention.

    Table headings are measured from the negative x axis towards +y; the
    library measures counterclockwise from +x.
    """
    return math.pi - theta


# Initial states of the two reference scenarios, in table convention:
# (position, position variances, speed, heading)
_TABLE = {
    "ego": ((0.0, 0.0), (0.1**2, 0.05**2), 0.0, 0.0),
    1: ((5.5, 5.5), (0.2**2, 0.1**2), 1.4, -math.pi / 4),
    2: ((-1.5, 6.0), (0.2**2, 0.1**2), 3.25, -3 * math.pi / 8),
}
TABLE_SPEED_STD = 0.1
TABLE_HEADING_STD = 0.1


def _table_agent(key, orientation_enabled: bool, name: str) -> AgentSpec:
    (x, y), (vx, vy), speed, theta = _TABLE[key]
    state = kinematic_state(
        x,
        y,
        table_heading(theta),
        speed,
        np.diag([vx, vy]),
        speed_std=TABLE_SPEED_STD,
        heading_std=TABLE_HEADING_STD if orientation_enabled else 0.0,
    )
    return AgentSpec(state, DEFAULT_SHAPE, name)


def build_scenario(scenario_id, orientation_enabled: bool = False) -> ScenarioSpec:
    """Reference scenario 1 or 2, or ``"empty"`` (ego only)."""
    key = str(scenario_id).removeprefix("builtin:")
    ego = _table_agent("ego", orientation_enabled, "ego")
    if key == "empty":
        return ScenarioSpec(ego, (), 0.1, 3.0, orientation_enabled, "empty")
    if key not in ("1", "2"):
        raise InvalidArgumentError(f"unknown scenario id {scenario_id!r}")
    obstacle = _table_agent(int(key), orientation_enabled, "obstacle")
    return ScenarioSpec(ego, (obstacle,), 0.1, 3.0, orientation_enabled, f"scenario-{key}")


def forecast_uncertainty(initial, dt, horizon, sigma_pos=0.3, sigma_v=0.15, shape=DEFAULT_SHAPE) -> GaussianTrajectory:
    """Obstacle forecast with symmetric positional and velocity uncertainty.

    ``initial`` supplies the mean (a PoseVelocityGaussian or a 5-vector);
    its covariance is replaced.
    """
    if not (sigma_pos > 0 and sigma_v > 0):
        raise InvalidArgumentError("sigmas must be positive")
    mean = initial.mean if isinstance(initial, PoseVelocityGaussian) else np.asarray(initial, float)
    cov = np.zeros((5, 5))
    cov[0, 0] = cov[1, 1] = sigma_pos**2
    cov[3, 3] = cov[4, 4] = sigma_v**2
    return propagate_cv(PoseVelocityGaussian(mean, cov), dt, horizon, shape)


def deterministic_trajectory(positions, headings, velocities, dt, shape=DEFAULT_SHAPE) -> GaussianTrajectory:
    """Zero-covariance trajectory from per-step poses and velocities."""
    states = []
    for (x, y), h, (vx, vy) in zip(positions, headings, velocities):
        states.append(PoseVelocityGaussian([x, y, h, vx, vy], np.zeros((5, 5))))
    return GaussianTrajectory(dt, tuple(states), shape)
