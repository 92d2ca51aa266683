"""Sampling oracles: per-step state sampling and full-trajectory first-passage sampling.

Random numbers come from counter-based streams addressed by
``(seed, stream, chunk)``; samples are generated in fixed-size chunks by
sample index, so splitting the chunks across any number of workers yields
bit-identical integer counts.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .gaussian import THETA
from .geometry import Shape, rectangle_corners, rectangles_intersect_batch
from .prediction import GaussianTrajectory, check_same_grid
from .series import ProbabilityTimeSeries

CHUNK_SIZE = 2048

# stream identifiers
_EGO, _OBS = 0, 1
_STATE, _TRAJ = 0, 1


@dataclass(frozen=True)
class McConfig:
    sample_count: int = 25_000
    seed: int = 0
    orientation_enabled: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.sample_count < 1:
            raise InvalidArgumentError("sample_count must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be >= 1")


@dataclass(frozen=True, eq=False)
class McResult:
    series: ProbabilityTimeSeries
    standard_error: np.ndarray
    sample_count: int

    @property
    def values(self) -> np.ndarray:
        return self.series.values


def seeded_stream(seed: int, stream_id) -> np.random.Generator:
    """Generator for ``(seed, stream_id)``; ``stream_id`` is an int or a tuple of ints."""
    key = tuple(stream_id) if isinstance(stream_id, (tuple, list)) else (int(stream_id),)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def standard_error(p: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.sqrt(p * (1.0 - p) / n)


def sqrt_factor(cov: np.ndarray) -> np.ndarray:
    """A matrix ``A`` with ``A A^T = cov``: Cholesky when definite, else symmetric square root."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def _chunks(n: int):
    return [(c, c * CHUNK_SIZE, min(n, (c + 1) * CHUNK_SIZE)) for c in range((n + CHUNK_SIZE - 1) // CHUNK_SIZE)]


def _run_chunks(fn, n: int, threads: int) -> np.ndarray:
    chunks = _chunks(n)
    if threads <= 1 or len(chunks) == 1:
        parts = [fn(*c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: fn(*c), chunks))
    return np.sum(parts, axis=0)


def _normals(seed, stream, chunk, count, dim) -> np.ndarray:
    return seeded_stream(seed, stream + (chunk,)).standard_normal((count, dim))


def default_threads() -> int:
    env = os.environ.get("COLLPROB_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise InvalidArgumentError(f"COLLPROB_THREADS must be an integer, got {env!r}") from None


def _result(traj: GaussianTrajectory, counts: np.ndarray, n: int, method: str) -> McResult:
    p = counts / n
    return McResult(ProbabilityTimeSeries(traj.times, p, method, {"sample_count": n}), standard_error(p, n), n)


def mc_state_sampling(
    ego_traj: GaussianTrajectory, obs_traj: GaussianTrajectory, cfg: McConfig = McConfig(), shapes=None
) -> McResult:
    """Fraction of independently drawn (ego, obstacle) pose pairs that overlap, per step."""
    check_same_grid(ego_traj, obs_traj)
    ego_shape, obs_shape = (ego_traj.shape, obs_traj.shape) if shapes is None else map(Shape._make, shapes)
    n_steps = len(ego_traj)
    agents = []
    for role, traj in ((_EGO, ego_traj), (_OBS, obs_traj)):
        m = traj.means()[:, :3]
        a = np.array([sqrt_factor(c[:3, :3]) for c in traj.covs()])
        if not cfg.orientation_enabled:
            a[:, THETA, :] = 0.0
        agents.append((role, m, a))

    def chunk(c, lo, hi):
        counts = np.zeros(n_steps, dtype=np.int64)
        for k in range(n_steps):
            poses = []
            for role, m, a in agents:
                z = _normals(cfg.seed, (_STATE, role, k), c, hi - lo, 3)
                poses.append(m[k] + z @ a[k].T)
            (pe, po), (se, so) = poses, (ego_shape, obs_shape)
            ce = rectangle_corners(se.length, se.width, pe[:, 0], pe[:, 1], pe[:, 2])
            co = rectangle_corners(so.length, so.width, po[:, 0], po[:, 1], po[:, 2])
            counts[k] = np.count_nonzero(rectangles_intersect_batch(ce, co))
        return counts

    return _result(ego_traj, _run_chunks(chunk, cfg.sample_count, cfg.threads), cfg.sample_count, "mc_state")


def mc_trajectory_sampling(
    ego_traj: GaussianTrajectory, obs_traj: GaussianTrajectory, cfg: McConfig = McConfig(), shapes=None
) -> McResult:
    """First-passage collision probability from whole sampled trajectories.

    Each sample draws one deviation of the initial 5-D state and carries it
    along the mean trajectory with constant velocity: position deviations
    grow by ``t * velocity deviation``, heading and velocity deviations stay
    fixed. For constant-velocity mean trajectories this is exactly the
    propagation of the sampled initial state.
    """
    check_same_grid(ego_traj, obs_traj)
    ego_shape, obs_shape = (ego_traj.shape, obs_traj.shape) if shapes is None else map(Shape._make, shapes)
    n_steps = len(ego_traj)
    t = ego_traj.times
    agents = []
    for role, traj in ((_EGO, ego_traj), (_OBS, obs_traj)):
        a = sqrt_factor(traj.states[0].cov)
        if not cfg.orientation_enabled:
            a = a.copy()
            a[THETA, :] = 0.0
        agents.append((role, traj.means(), a))

    def chunk(c, lo, hi):
        poses = []
        for role, m, a in agents:
            d = _normals(cfg.seed, (_TRAJ, role), c, hi - lo, 5) @ a.T  # (n, 5)
            x = m[None, :, 0] + d[:, None, 0] + t[None, :] * d[:, None, 3]
            y = m[None, :, 1] + d[:, None, 1] + t[None, :] * d[:, None, 4]
            h = m[None, :, 2] + d[:, None, 2]
            poses.append((x, y, h))
        (xe, ye, he), (xo, yo, ho) = poses
        ce = rectangle_corners(ego_shape.length, ego_shape.width, xe, ye, he)
        co = rectangle_corners(obs_shape.length, obs_shape.width, xo, yo, ho)
        hit = rectangles_intersect_batch(ce, co)  # (n, T)
        first = np.where(hit.any(axis=1), hit.argmax(axis=1), n_steps)
        return np.cumsum(np.bincount(first, minlength=n_steps + 1)[:n_steps])

    return _result(ego_traj, _run_chunks(chunk, cfg.sample_count, cfg.threads), cfg.sample_count, "mc_traj")
