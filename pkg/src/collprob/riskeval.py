"""Batch risk evaluation of candidate ego trajectories against obstacle forecasts."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary import CrossingConfig, crossing_probability_values
from .errors import GridMismatchError, InvalidArgumentError
from .gaussian import ego_frame
from .geometry import Shape, obb_3sigma_corners, rectangle_corners, rectangles_intersect_batch
from .overlap import OverlapConfig, overlap_series_values
from .prediction import GaussianTrajectory, deterministic_trajectory, forecast_uncertainty
from .quadrature import DEFAULT_ORDER

METHODS = ("overlap-max", "overlap-independent", "boundary-crossing", "conservative-obb")

# candidates per work item; fixed so that results do not depend on the thread count
CHUNK = 50


@dataclass(frozen=True, eq=False)
class CandidateBatch:
    candidates: tuple
    obstacles: tuple
    method: str = "boundary-crossing"

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if not self.candidates:
            raise InvalidArgumentError("a batch needs at least one candidate")
        ref = self.candidates[0]
        for t in self.candidates + self.obstacles:
            if len(t) != len(ref) or abs(t.dt - ref.dt) > 1e-12:
                raise GridMismatchError("all candidates and obstacles must share dt and horizon")
        if any(Shape(*c.shape) != Shape(*ref.shape) for c in self.candidates):
            raise InvalidArgumentError("all candidates must share one footprint")

    def with_method(self, method: str) -> "CandidateBatch":
        return CandidateBatch(self.candidates, self.obstacles, method)


@dataclass(frozen=True)
class RiskConfig:
    quadrature_order: int = DEFAULT_ORDER
    theta_enabled: bool = True
    n_sigma: float = 3.0
    threads: int = 1


@dataclass(frozen=True, eq=False)
class RiskReport:
    """Per-candidate risk; for conservative-obb the probabilities are 0/1 infeasibility indicators."""

    method: str
    per_obstacle: np.ndarray  # (N, K)
    combined: np.ndarray  # (N,)
    feasible: np.ndarray | None  # (N,) bool, conservative-obb only
    wall_time: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.combined)

    @property
    def feasible_count(self) -> int | None:
        return None if self.feasible is None else int(np.count_nonzero(self.feasible))


def combine_obstacles(per_obstacle: np.ndarray) -> np.ndarray:
    """Independence across distinct agents: ``1 - prod_k (1 - P_k)``."""
    p = np.clip(np.asarray(per_obstacle, dtype=float), 0.0, 1.0)
    if p.shape[-1] == 0:
        return np.zeros(p.shape[:-1])
    if np.all(p < 1.0):
        return 0.0 - np.expm1(np.sum(np.log1p(-p), axis=-1))
    return 1.0 - np.prod(1.0 - p, axis=-1)


def _stack(trajs):
    return np.array([t.means() for t in trajs]), np.array([t.covs() for t in trajs])


def _probabilistic(method, cand_m, cand_c, cand_shape, obstacle, dt, config: RiskConfig) -> np.ndarray:
    n, t = cand_m.shape[:2]
    obs_m, obs_c = obstacle.means(), obstacle.covs()
    rel_m = (obs_m[None] - cand_m).reshape(-1, 5)
    ego_c = cand_c.reshape(-1, 5, 5)
    if not config.theta_enabled:
        ego_c = ego_c.copy()
        ego_c[:, 2, :] = ego_c[:, :, 2] = 0.0
    means, covs = ego_frame(rel_m, (obs_c[None] + cand_c).reshape(-1, 5, 5), cand_m.reshape(-1, 5), ego_c)
    if method == "boundary-crossing":
        cfg = CrossingConfig(config.quadrature_order, theta_enabled=config.theta_enabled)
        cum, _, _ = crossing_probability_values(
            means.reshape(n, t, 6), covs.reshape(n, t, 6, 6), 0.0, dt, cand_shape, obstacle.shape, cfg
        )
        return cum[:, -1]
    cfg = OverlapConfig(config.quadrature_order, theta_enabled=config.theta_enabled)
    p = overlap_series_values(means, covs, 0.0, cand_shape, obstacle.shape, cfg).reshape(n, t)
    if method == "overlap-max":
        return p.max(axis=1)
    with np.errstate(divide="ignore"):  # log1p(-1) = -inf gives risk 1
        return 0.0 - np.expm1(np.sum(np.log1p(-np.minimum(p, 1.0)), axis=1))


def _obb_hits(cand_m, cand_shape, obstacle, n_sigma) -> np.ndarray:
    box = obb_3sigma_corners(obstacle.means(), obstacle.covs(), obstacle.shape, n_sigma)  # (T, 4, 2)
    ego = rectangle_corners(cand_shape.length, cand_shape.width, cand_m[..., 0], cand_m[..., 1], cand_m[..., 2])
    return rectangles_intersect_batch(ego, box[None]).any(axis=1).astype(float)


def evaluate_batch(batch: CandidateBatch, config: RiskConfig = RiskConfig()) -> RiskReport:
    """Risk of every candidate against all obstacles, combined across obstacles."""
    start = time.perf_counter()
    cand_shape = Shape(*batch.candidates[0].shape)
    dt = batch.candidates[0].dt
    n = len(batch.candidates)

    def work(lo):
        cand_m, cand_c = _stack(batch.candidates[lo : lo + CHUNK])
        cols = []
        for obs in batch.obstacles:
            if batch.method == "conservative-obb":
                cols.append(_obb_hits(cand_m, cand_shape, obs, config.n_sigma))
            else:
                cols.append(_probabilistic(batch.method, cand_m, cand_c, cand_shape, obs, dt, config))
        return np.stack(cols, axis=1) if cols else np.zeros((len(cand_m), 0))

    starts = range(0, n, CHUNK)
    if config.threads > 1 and n > CHUNK:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    per_obstacle = np.clip(np.concatenate(parts, axis=0), 0.0, 1.0)
    if batch.method == "conservative-obb":
        combined = per_obstacle.max(axis=1) if per_obstacle.shape[1] else np.zeros(n)
        feasible = combined == 0.0
    else:
        combined = np.maximum(combine_obstacles(per_obstacle), per_obstacle.max(axis=1, initial=0.0))
        feasible = None
    return RiskReport(batch.method, per_obstacle, combined, feasible, time.perf_counter() - start)


def rank_candidates(report: RiskReport) -> list[int]:
    """Candidate indices by ascending combined risk; ties keep index order.

    For conservative-obb only feasible candidates are ranked.
    """
    if len(report) == 0:
        raise InvalidArgumentError("empty report")
    order = np.argsort(report.combined, kind="stable")
    if report.feasible is not None:
        order = order[report.feasible[order]]
    return [int(i) for i in order]


# ---------------------------------------------------------------- cut-in fixture


@dataclass(frozen=True)
class CutInParams:
    """Two-lane road; ego in the right lane, a vehicle merging in from the left lane ahead."""

    dt: float = 0.1
    horizon: float = 3.0
    lane_width: float = 3.5
    ego_speed: float = 12.0
    merge_start: tuple = (4.5, 2.8)
    merge_speed: float = 12.0
    merge_lateral_speed: float = -1.2
    lead_start: tuple = (30.0, 0.0)
    lead_speed: float = 10.0
    adjacent_start: tuple = (-10.0, 3.5)
    adjacent_speed: float = 13.0
    sigma_pos: float = 0.3
    sigma_v: float = 0.15
    accelerations: tuple = tuple(np.round(np.linspace(-5.0, 1.0, 30), 6))
    lateral_offsets: tuple = tuple(np.round(np.linspace(-0.75, 0.75, 20), 6))


def _obstacle(start, speed, lateral_speed, p: CutInParams) -> GaussianTrajectory:
    heading = math.atan2(lateral_speed, speed)
    mean = [start[0], start[1], heading, speed, lateral_speed]
    return forecast_uncertainty(mean, p.dt, p.horizon, p.sigma_pos, p.sigma_v)


def _candidate(accel, offset, p: CutInParams) -> GaussianTrajectory:
    """Constant longitudinal acceleration (stopping at standstill) and a smooth lane offset."""
    t = p.dt * np.arange(int(round(p.horizon / p.dt)) + 1)
    t_stop = p.ego_speed / -accel if accel < 0 else math.inf
    tt = np.minimum(t, t_stop)
    x = p.ego_speed * tt + 0.5 * accel * tt**2
    vx = np.where(t < t_stop, p.ego_speed + accel * t, 0.0)
    u = t / p.horizon
    y = offset * (3 * u**2 - 2 * u**3)
    vy = offset * (6 * u - 6 * u**2) / p.horizon
    heading = np.arctan2(vy, np.maximum(vx, 1e-9))
    return deterministic_trajectory(np.stack([x, y], 1), heading, np.stack([vx, vy], 1), p.dt)


def cut_in_fixture(params: CutInParams = CutInParams(), method: str = "boundary-crossing") -> CandidateBatch:
    """600 candidate ego trajectories (acceleration x lateral offset) against three forecasts."""
    p = params
    obstacles = (
        _obstacle(p.merge_start, p.merge_speed, p.merge_lateral_speed, p),
        _obstacle(p.lead_start, p.lead_speed, 0.0, p),
        _obstacle(p.adjacent_start, p.adjacent_speed, 0.0, p),
    )
    candidates = tuple(_candidate(a, o, p) for a in p.accelerations for o in p.lateral_offsets)
    return CandidateBatch(candidates, obstacles, method)
