"""Gaussian state densities, relative-state convolution, whitening and conditioning."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DegenerateCovarianceError, InvalidArgumentError

X, Y, THETA, VX, VY = range(5)
STATE_LABELS = ("x", "y", "theta", "vx", "vy")
POSE = (X, Y, THETA)
POSITION = (X, Y)
VELOCITY = (VX, VY)

SQRT_2PI = math.sqrt(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / SQRT_2PI
SINGULAR_RATIO = 1e-12


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return INV_SQRT_2PI * np.exp(-0.5 * x * x)


def std_normal_cdf(x):
    return special.ndtr(x)


def erf(x):
    return special.erf(x)


def _check_symmetric(cov: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidArgumentError("covariance must be symmetric")


def require_positive_definite(cov: np.ndarray, what: str = "covariance"):
    """Raise unless ``cov`` is numerically positive definite."""
    w, v = np.linalg.eigh(cov)
    if not np.all(np.isfinite(w)) or w[0] <= SINGULAR_RATIO * max(w[-1], 0.0) or w[-1] <= 0.0:
        raise DegenerateCovarianceError(
            f"{what} is singular or indefinite (eigenvalue {w[0]:.3e} along {np.round(v[:, 0], 6).tolist()})",
            direction=v[:, 0],
        )


@dataclass(frozen=True, eq=False)
class GaussianND:
    mean: np.ndarray
    cov: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        n = mean.size
        if cov.shape != (n, n):
            raise InvalidArgumentError(f"covariance shape {cov.shape} does not match mean of length {n}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidArgumentError("mean and covariance must be finite")
        _check_symmetric(cov)
        cov = 0.5 * (cov + cov.T)
        if n and np.linalg.eigvalsh(cov)[0] < -1e-10 * max(1.0, float(np.max(np.abs(cov)))):
            raise InvalidArgumentError("covariance must be positive semi-definite")
        labels = tuple(self.labels) if self.labels else tuple(f"x{i}" for i in range(n))
        if len(labels) != n:
            raise InvalidArgumentError("one label per dimension required")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal(self, idx: Sequence[int]) -> "GaussianND":
        idx = list(idx)
        return GaussianND(self.mean[idx], self.cov[np.ix_(idx, idx)], tuple(self.labels[i] for i in idx))

    def std(self, i: int) -> float:
        return math.sqrt(max(self.cov[i, i], 0.0))


class PoseVelocityGaussian(GaussianND):
    """Joint Gaussian over ``(x, y, theta, vx, vy)`` of one agent at one instant."""

    def __init__(self, mean, cov, labels=STATE_LABELS):
        super().__init__(mean, cov, STATE_LABELS)
        if self.dim != 5:
            raise InvalidArgumentError("pose/velocity state has 5 components")

    @classmethod
    def from_blocks(cls, pose_mean, velocity_mean, pose_cov, velocity_cov, cross_vx=None):
        """Assemble from pose (x, y, theta) and velocity blocks; ``cross_vx`` is Cov(v, pose), 2x3."""
        mean = np.concatenate([np.asarray(pose_mean, float), np.asarray(velocity_mean, float)])
        cov = np.zeros((5, 5))
        cov[:3, :3] = pose_cov
        cov[3:, 3:] = velocity_cov
        if cross_vx is not None:
            cov[3:, :3] = cross_vx
            cov[:3, 3:] = np.asarray(cross_vx).T
        return cls(mean, cov)

    @property
    def position_mean(self):
        return self.mean[:2]

    @property
    def heading_mean(self) -> float:
        return float(self.mean[THETA])

    @property
    def heading_std(self) -> float:
        return self.std(THETA)

    @property
    def velocity_mean(self):
        return self.mean[3:]

    @property
    def pose_cov(self):
        return self.cov[:3, :3]

    @property
    def velocity_cov(self):
        return self.cov[3:, 3:]

    @property
    def cross_vx(self):
        """Cov(v, (x, y)), the 2x2 velocity-position block."""
        return self.cov[3:, :2]


class RelativeStateGaussian(PoseVelocityGaussian):
    """State of the obstacle relative to the ego (obstacle minus ego)."""


def marginal_pose(s: PoseVelocityGaussian) -> GaussianND:
    return s.marginal(POSE)


def relative_state(ego: PoseVelocityGaussian, obs: PoseVelocityGaussian) -> RelativeStateGaussian:
    """Density of obstacle minus ego for independent agents."""
    return RelativeStateGaussian(obs.mean - ego.mean, obs.cov + ego.cov)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """Affine map ``p -> W (p[order] - mean)`` with ``W cov W^T = I``.

    ``W`` is lower triangular in ``order``: the k-th whitened coordinate
    depends only on the first k+1 ordered source coordinates.
    """

    matrix: np.ndarray
    mean: np.ndarray
    order: tuple

    @property
    def mean_offset(self) -> np.ndarray:
        return -self.matrix @ self.mean

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if p.shape[-1] != len(self.order):
            raise InvalidArgumentError(f"expected points of dimension {len(self.order)}, got {p.shape[-1]}")
        return (p - self.mean) @ self.matrix.T

    def invert(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if p.shape[-1] != len(self.order):
            raise InvalidArgumentError(f"expected points of dimension {len(self.order)}, got {p.shape[-1]}")
        return np.linalg.solve(self.matrix, p.T).T + self.mean


def whiten(g: GaussianND, coordinate_order: Sequence[int] | None = None) -> WhiteningTransform:
    """Cholesky whitening of ``g`` over the coordinates in ``coordinate_order``.

    With ``cov = L L^T`` (L lower triangular) the returned matrix is ``L^-1``,
    which also satisfies ``W^T W = cov^-1``. Points passed to the transform
    must already be ordered as ``coordinate_order``.
    """
    order = tuple(range(g.dim)) if coordinate_order is None else tuple(coordinate_order)
    if sorted(order) != sorted(set(order)) or any(not 0 <= i < g.dim for i in order):
        raise InvalidArgumentError(f"invalid coordinate order {order!r}")
    idx = list(order)
    cov = g.cov[np.ix_(idx, idx)]
    require_positive_definite(cov)
    L = np.linalg.cholesky(cov)
    W = np.linalg.solve(L, np.eye(len(idx)))
    W = np.tril(W)
    W.setflags(write=False)
    mean = g.mean[idx].copy()
    mean.setflags(write=False)
    return WhiteningTransform(W, mean, order)


def apply_whitening(t: WhiteningTransform, points) -> np.ndarray:
    return t.apply(points)


def unwhiten(t: WhiteningTransform, points) -> np.ndarray:
    return t.invert(points)


def condition_on(mean: np.ndarray, cov: np.ndarray, index: int, values) -> tuple[np.ndarray, np.ndarray]:
    """Condition a Gaussian on coordinate ``index`` taking each of ``values``.

    Returns ``(means, cov)`` over the remaining coordinates (original order):
    ``means`` has one row per value, ``cov`` is shared. A zero-variance
    coordinate leaves the remaining marginal unchanged.
    """
    values = np.atleast_1d(np.asarray(values, dtype=float))
    rest = [i for i in range(len(mean)) if i != index]
    var = cov[index, index]
    m_rest = mean[rest]
    c_rest = cov[np.ix_(rest, rest)]
    if var <= 0.0:
        return np.broadcast_to(m_rest, (values.size, len(rest))).copy(), c_rest
    gain = cov[rest, index] / var
    means = m_rest + (values - mean[index])[:, None] * gain
    c_cond = c_rest - np.outer(gain, cov[index, rest])
    return means, 0.5 * (c_cond + c_cond.T)


def conditional_normal_velocity(rel: PoseVelocityGaussian, x, n) -> tuple[float, float]:
    """Mean and std of the normal velocity ``n . v`` given the position ``x``.

    Only the positional block is conditioned on; the heading is marginalized.
    """
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise InvalidArgumentError("normal must be a unit vector")
    idx = [X, Y, VX, VY]
    mu, sd = normal_velocity_moments(rel.mean[idx], rel.cov[np.ix_(idx, idx)], np.asarray(x, float)[None, :], n[None, :])
    return float(mu[0]), float(sd[0])


def normal_velocity_moments(mean4, cov4, points, normals):
    """Vectorized conditional moments of ``n . v`` given position, for (x, y, vx, vy) Gaussians.

    ``points`` is ``(..., 2)`` and ``normals`` broadcasts against it.
    """
    sx = cov4[:2, :2]
    require_positive_definite(sx, "positional covariance")
    svx = cov4[2:, :2]
    gain = np.linalg.solve(sx, svx.T).T  # Sigma_vx Sigma_x^-1
    cond_cov = cov4[2:, 2:] - gain @ svx.T
    mu_v = mean4[2:] + (np.asarray(points) - mean4[:2]) @ gain.T
    mu_n = np.sum(mu_v * normals, axis=-1)
    var_n = np.einsum("...i,ij,...j->...", normals, cond_cov, normals)
    return mu_n, np.sqrt(np.maximum(var_n, 0.0))


def expected_inward_speed(mu, sigma):
    """Mean of the negative part of ``v ~ N(mu, sigma^2)``, i.e. ``E[max(-v, 0)]``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise InvalidArgumentError("sigma must be non-negative")
    safe = np.where(sigma > 0, sigma, 1.0)
    z = mu / safe
    val = -mu * special.ndtr(-z) + sigma * std_normal_pdf(z)
    val = np.where(sigma > 0, np.maximum(val, 0.0), np.maximum(-mu, 0.0))
    return float(val) if val.ndim == 0 else val



def _rotations(angles) -> np.ndarray:
    """Stack of ``R(-angle)`` matrices."""
    c, s = np.cos(angles), np.sin(angles)
    rot = np.empty(np.shape(angles) + (2, 2))
    rot[..., 0, 0] = rot[..., 1, 1] = c
    rot[..., 0, 1] = s
    rot[..., 1, 0] = -s
    return rot


def ego_frame(rel_means, rel_covs, ego_means, ego_covs) -> tuple[np.ndarray, np.ndarray]:
    """Relative states in the mean ego body frame, augmented with the ego heading deviation.

    Position and velocity of the obstacle relative to the ego are rotated by
    minus the mean ego heading. A sixth coordinate ``d`` holds the deviation
    of the ego heading from its mean (``Cov(d, rel) = -Cov(theta_e, ego)``),
    to be removed by :func:`absorb_ego_rotation` once the relative heading is
    fixed.

    Shapes: ``(T, 5)`` means and ``(T, 5, 5)`` covariances in; ``(T, 6)`` and
    ``(T, 6, 6)`` out.
    """
    rel_means = np.asarray(rel_means, dtype=float)
    rel_covs = np.asarray(rel_covs, dtype=float)
    ego_means = np.asarray(ego_means, dtype=float)
    ego_covs = np.asarray(ego_covs, dtype=float)
    n = len(rel_means)
    A = np.zeros((n, 6, 6))
    rot = _rotations(ego_means[:, THETA])
    A[:, 0:2, 0:2] = A[:, 3:5, 3:5] = rot
    A[:, THETA, THETA] = A[:, 5, 5] = 1.0
    joint = np.zeros((n, 6, 6))
    joint[:, :5, :5] = rel_covs
    joint[:, :5, 5] = joint[:, 5, :5] = -ego_covs[:, THETA, :]
    joint[:, 5, 5] = ego_covs[:, THETA, THETA]
    means = np.concatenate([rel_means, np.zeros((n, 1))], axis=1)
    means = np.einsum("nij,nj->ni", A, means)
    covs = A @ joint @ np.swapaxes(A, -1, -2)
    return means, 0.5 * (covs + np.swapaxes(covs, -1, -2))


def absorb_ego_rotation(mean5, cov5) -> tuple[np.ndarray, np.ndarray]:
    """Remove the ego heading deviation from ``(x, y, vx, vy, d)`` Gaussians.

    The frame is rotated exactly by ``-E[d]``; the remaining deviation
    ``r = d - E[d]`` is linearized, ``R(-r) p ~ p - r J mu_p`` with ``J`` the
    90 degree rotation. Returns ``(x, y, vx, vy)`` means ``(R, 4)`` and
    covariances ``(R, 4, 4)``.
    """
    mean5 = np.asarray(mean5, dtype=float)
    cov5 = np.asarray(cov5, dtype=float)
    rot = _rotations(mean5[:, 4])
    p = np.einsum("nij,nj->ni", rot, mean5[:, 0:2])
    v = np.einsum("nij,nj->ni", rot, mean5[:, 2:4])
    A = np.zeros((len(mean5), 4, 5))
    A[:, 0:2, 0:2] = A[:, 2:4, 2:4] = rot
    A[:, 0:2, 4] = np.stack([p[:, 1], -p[:, 0]], axis=-1)
    A[:, 2:4, 4] = np.stack([v[:, 1], -v[:, 0]], axis=-1)
    cov4 = A @ cov5 @ np.swapaxes(A, -1, -2)
    return np.concatenate([p, v], axis=1), 0.5 * (cov4 + np.swapaxes(cov4, -1, -2))
