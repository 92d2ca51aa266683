"""Probability of spatial overlap between the ego and an obstacle.

Per timestep, the relative position density is whitened and integrated over
the collision volume edge by edge: for a counterclockwise polygon,

    sum_n  int_{x_n}^{x_n+1} phi(x) * (Phi(y_n(x)) - 1/2) dx  =  -P(inside),

where ``y_n`` is the line through edge ``n`` in whitened coordinates. Heading
uncertainty is handled by Gauss-Legendre quadrature over the relative
heading, rebuilding the collision volume and conditioning the positional
density at every node.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateCovarianceError, InvalidArgumentError
from .gaussian import INV_SQRT_2PI, SINGULAR_RATIO, GaussianND, PoseVelocityGaussian, absorb_ego_rotation, ego_frame, relative_state
from .geometry import ConvexPolygon, Shape, rect_minkowski_vertices
from .prediction import GaussianTrajectory, check_same_grid
from .quadrature import DEFAULT_ORDER, QuadratureRule, gauss_legendre
from .series import ProbabilityTimeSeries, as_values

log = logging.getLogger(__name__)

# whitened coordinates beyond this radius carry < 1.2e-19 of mass per axis
CUTOFF = 9.0
CLAMP_WARN = 1e-6


@dataclass(frozen=True)
class OverlapConfig:
    quadrature_order: int = DEFAULT_ORDER
    theta_truncation: float = 4.0
    theta_enabled: bool = True

    def __post_init__(self):
        if self.quadrature_order < 2:
            raise InvalidArgumentError("quadrature order must be at least 2")
        if not self.theta_truncation > 0:
            raise InvalidArgumentError("theta truncation must be positive")

    @property
    def rule(self) -> QuadratureRule:
        return gauss_legendre(self.quadrature_order)


def check_positional_covs(cov2: np.ndarray):
    """Vectorized positive-definiteness check for stacks of 2x2 covariances."""
    a, b, c = cov2[..., 0, 0], cov2[..., 0, 1], cov2[..., 1, 1]
    half_tr = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b * b)
    lo, hi = half_tr - rad, half_tr + rad
    bad = ~(np.isfinite(lo) & (hi > 0) & (lo > SINGULAR_RATIO * hi))
    if np.any(bad):
        k = np.flatnonzero(bad.reshape(-1))[0]
        m = cov2.reshape(-1, 2, 2)[k]
        w, v = np.linalg.eigh(m)
        raise DegenerateCovarianceError(
            f"positional covariance {m.tolist()} is singular (eigenvalue {w[0]:.3e} along {np.round(v[:, 0], 6).tolist()})",
            direction=v[:, 0],
        )


def _edge_sum(ax, ay, bx, by, rule: QuadratureRule) -> np.ndarray:
    """Signed sum over edges of ``int phi(x) (Phi(y(x)) - 1/2) dx``; edges on the last axis."""
    dx = bx - ax
    flat = np.abs(dx) <= 1e-13 * (1.0 + np.abs(ax) + np.abs(bx))
    safe_dx = np.where(flat, 1.0, dx)
    m = np.where(flat, 0.0, (by - ay) / safe_dx)
    c = ay - m * ax
    lo = np.clip(np.minimum(ax, bx), -CUTOFF, CUTOFF)
    hi = np.clip(np.maximum(ax, bx), -CUTOFF, CUTOFF)

    # x-range over which |y(x)| <= CUTOFF; outside it Phi(y) - 1/2 is +-1/2
    with np.errstate(divide="ignore", invalid="ignore"):
        x1 = (-CUTOFF - c) / m
        x2 = (CUTOFF - c) / m
    level = m == 0.0
    inside_band = np.abs(c) <= CUTOFF
    xmin = np.where(level, np.where(inside_band, -np.inf, np.inf), np.minimum(x1, x2))
    xmax = np.where(level, np.inf, np.maximum(x1, x2))
    tlo = np.maximum(lo, xmin)
    thi = np.minimum(hi, xmax)

    cdf = special.ndtr
    left_end = np.minimum(tlo, hi)
    left = np.where(left_end > lo, np.sign(m * lo + c) * 0.5 * (cdf(left_end) - cdf(lo)), 0.0)
    right_start = np.maximum(thi, lo)
    right = np.where(hi > right_start, np.sign(m * hi + c) * 0.5 * (cdf(hi) - cdf(right_start)), 0.0)

    mid = np.zeros(dx.shape)
    live = np.nonzero((thi > tlo) & ~flat)
    if live[0].size:
        t0, t1, ml, cl = tlo[live], thi[live], m[live], c[live]
        hw = 0.5 * (t1 - t0)
        nodes = (0.5 * (t0 + t1))[:, None] + hw[:, None] * rule.nodes
        f = special.ndtr(ml[:, None] * nodes + cl[:, None])
        f -= 0.5
        g = nodes * nodes
        g *= -0.5
        np.exp(g, out=g)
        f *= g
        mid[live] = INV_SQRT_2PI * hw * (f @ rule.weights)

    total = left + right + mid
    total = np.where(flat | (hi <= lo), 0.0, np.sign(dx) * total)
    return total.sum(axis=-1)


def overlap_kernel(mean2: np.ndarray, cov2: np.ndarray, vertices: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """Unclamped probability mass of ``N(mean2, cov2)`` inside each polygon.

    Shapes: ``mean2 (..., 2)``, ``cov2 (..., 2, 2)``, ``vertices (..., n, 2)``
    counterclockwise; zero-length edges are allowed.
    """
    check_positional_covs(cov2)
    l00 = np.sqrt(cov2[..., 0, 0])
    l10 = cov2[..., 1, 0] / l00
    l11 = np.sqrt(cov2[..., 1, 1] - l10 * l10)
    # W = L^-1 for cov = L L^T; lower triangular with positive diagonal keeps orientation
    w00 = 1.0 / l00
    w10 = -l10 / (l00 * l11)
    w11 = 1.0 / l11
    d = vertices - mean2[..., None, :]
    xh = w00[..., None] * d[..., 0]
    yh = w10[..., None] * d[..., 0] + w11[..., None] * d[..., 1]
    return -_edge_sum(xh, yh, np.roll(xh, -1, axis=-1), np.roll(yh, -1, axis=-1), rule)


def _clamp(p: np.ndarray, where: str) -> np.ndarray:
    excess = np.maximum(p - 1.0, 0.0) + np.maximum(-p, 0.0)
    if np.any(excess > CLAMP_WARN):
        log.warning("%s: clamped probability by %.3e; check integration settings", where, float(excess.max()))
    return np.clip(p, 0.0, 1.0)


def overlap_probability_fixed_theta(rel_pose: GaussianND, volume: ConvexPolygon, quadrature_order: int = DEFAULT_ORDER) -> float:
    """Probability that the relative position (first two coordinates) lies in ``volume``."""
    rule = gauss_legendre(quadrature_order)
    p = overlap_kernel(rel_pose.mean[:2], rel_pose.cov[:2, :2], volume.vertices, rule)
    return float(_clamp(np.asarray(p), "overlap"))


@dataclass(frozen=True)
class HeadingRows:
    """Flattened (timestep, heading node) rows with conditioned densities."""

    step: np.ndarray  # (R,) index of the source timestep
    weight: np.ndarray  # (R,) quadrature weight, summing to 1 per step
    mean4: np.ndarray  # (R, 4) mean of (x, y, vx, vy) given the node heading
    cov4: np.ndarray  # (R, 4, 4)
    ego_heading: np.ndarray  # (R,)
    obs_heading: np.ndarray  # (R,)


def heading_rows(means, covs, ego_headings, theta_enabled: bool, truncation: float, rule: QuadratureRule) -> HeadingRows:
    """Expand relative states into heading quadrature rows.

    Steps with zero heading variance, or all steps when ``theta_enabled`` is
    false, contribute a single row at the mean heading using the marginal
    positional/velocity density. Otherwise the heading range
    ``mean +- truncation * std`` is covered with the rule's nodes; the weights
    are normalized by the captured mass.

    States are 5-D ``(x, y, theta, vx, vy)`` or the 6-D ego-frame form of
    :func:`collprob.gaussian.ego_frame`, whose ego heading deviation is
    absorbed after conditioning on the relative heading.
    """
    means = np.asarray(means, dtype=float)
    dim = means.shape[-1]
    if dim not in (5, 6):
        raise InvalidArgumentError(f"expected 5- or 6-dimensional states, got {dim}")
    means = means.reshape(-1, dim)
    covs = np.asarray(covs, dtype=float).reshape(-1, dim, dim)
    rest = [0, 1, 3, 4, 5][: dim - 1]
    ego_headings = np.broadcast_to(np.asarray(ego_headings, dtype=float), means.shape[:1])
    var = covs[:, 2, 2]
    orient = (var > 1e-24) if theta_enabled else np.zeros(len(means), dtype=bool)
    i_fix = np.flatnonzero(~orient)
    i_ori = np.flatnonzero(orient)

    step = [i_fix]
    weight = [np.ones(i_fix.size)]
    mean_r = [means[i_fix][:, rest]]
    cov_r = [covs[i_fix][:, rest][:, :, rest]]
    ego_h = [ego_headings[i_fix]]
    obs_h = [ego_headings[i_fix] + means[i_fix, 2]]

    if i_ori.size:
        k = rule.order
        z = truncation * rule.nodes
        w = rule.weights * truncation * np.exp(-0.5 * z * z)
        w = w / w.sum()
        mu_t = means[i_ori, 2]
        sd = np.sqrt(var[i_ori])
        dtheta = sd[:, None] * z[None, :]  # (So, K)
        gain = covs[i_ori][:, rest, 2] / var[i_ori, None]  # (So, D-1)
        m = means[i_ori][:, None, rest] + dtheta[..., None] * gain[:, None, :]
        c = covs[i_ori][:, rest][:, :, rest] - gain[:, :, None] * covs[i_ori][:, None, 2, rest]
        c = 0.5 * (c + np.swapaxes(c, -1, -2))
        step.append(np.repeat(i_ori, k))
        weight.append(np.tile(w, i_ori.size))
        mean_r.append(m.reshape(-1, dim - 1))
        cov_r.append(np.repeat(c, k, axis=0))
        ego_h.append(np.repeat(ego_headings[i_ori], k))
        obs_h.append((ego_headings[i_ori, None] + mu_t[:, None] + dtheta).reshape(-1))

    mean4, cov4 = np.concatenate(mean_r), np.concatenate(cov_r)
    if dim == 6:
        mean4, cov4 = absorb_ego_rotation(mean4, cov4)
    return HeadingRows(
        np.concatenate(step),
        np.concatenate(weight),
        mean4,
        cov4,
        np.concatenate(ego_h),
        np.concatenate(obs_h),
    )


def _step_count(means) -> int:
    m = np.asarray(means)
    return m.size // m.shape[-1]


def _per_step(rows: HeadingRows, values: np.ndarray, n_steps: int) -> np.ndarray:
    return np.bincount(rows.step, weights=rows.weight * values, minlength=n_steps)


# rows whose contribution is provably below this are skipped
NEGLIGIBLE = 1e-16


def tail_exponent(mean2: np.ndarray, cov2: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """``m^2 / 2`` for the Gaussian tail bound ``P(x in polygon) <= exp(-m^2 / 2)``.

    ``m`` is the distance from the mean to the polygon's circumscribed circle
    about the origin, in units of the largest positional standard deviation
    (``P(|x - mu| >= r) = exp(-r^2 / 2)`` for a unit 2-D Gaussian).
    """
    radius = np.sqrt(np.max(np.sum(vertices * vertices, axis=-1), axis=-1))
    gap = np.maximum(np.hypot(mean2[..., 0], mean2[..., 1]) - radius, 0.0)
    a, b, c = cov2[..., 0, 0], cov2[..., 0, 1], cov2[..., 1, 1]
    lam = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return 0.5 * gap * gap / lam


def overlap_series_values(
    means, covs, ego_headings, ego_shape, obs_shape, config: OverlapConfig = OverlapConfig()
) -> np.ndarray:
    """Vectorized per-step overlap probabilities for stacked relative states."""
    rows = heading_rows(means, covs, ego_headings, config.theta_enabled, config.theta_truncation, config.rule)
    verts = rect_minkowski_vertices(Shape(*ego_shape), rows.ego_heading, Shape(*obs_shape), rows.obs_heading)
    m2, c2 = rows.mean4[:, :2], rows.cov4[:, :2, :2]
    check_positional_covs(c2)
    live = np.flatnonzero(tail_exponent(m2, c2, verts) < -math.log(NEGLIGIBLE))
    p = np.zeros(len(m2))
    p[live] = overlap_kernel(m2[live], c2[live], verts[live], config.rule)
    return _clamp(_per_step(rows, p, _step_count(means)), "overlap")


def overlap_probability_with_orientation(
    rel: PoseVelocityGaussian, ego_shape, obs_shape, config: OverlapConfig = OverlapConfig(), ego_heading: float = 0.0
) -> float:
    """Overlap probability under heading uncertainty of the relative state.

    The ego body keeps ``ego_heading``; the obstacle body is at ``ego_heading``
    plus the relative heading.
    """
    return float(overlap_series_values(rel.mean[None], rel.cov[None], ego_heading, ego_shape, obs_shape, config)[0])


def relative_series(ego: GaussianTrajectory, obstacle: GaussianTrajectory, theta_enabled: bool = True):
    """Stacked relative states in the ego body frame, ``(T, 5)`` means and ``(T, 5, 5)`` covariances.

    Without orientation uncertainty the ego heading is taken at its mean.
    """
    check_same_grid(ego, obstacle)
    ego_m, ego_c = ego.means(), ego.covs()
    rel_m, rel_c = obstacle.means() - ego_m, obstacle.covs() + ego_c
    if not theta_enabled:
        ego_c = ego_c.copy()
        ego_c[:, 2, :] = ego_c[:, :, 2] = 0.0
    return ego_frame(rel_m, rel_c, ego_m, ego_c)


def overlap_series(ego: GaussianTrajectory, obstacle: GaussianTrajectory, config: OverlapConfig = OverlapConfig()) -> ProbabilityTimeSeries:
    means, covs = relative_series(ego, obstacle, config.theta_enabled)
    vals = overlap_series_values(means, covs, 0.0, ego.shape, obstacle.shape, config)
    return ProbabilityTimeSeries(ego.times, vals, "overlap")


def trajectory_max(series) -> float:
    v = as_values(series)
    if v.size == 0:
        raise InvalidArgumentError("empty probability series")
    return float(np.max(v))


def trajectory_independent_product(series) -> float:
    """Total probability when timesteps are treated as independent."""
    v = as_values(series)
    if v.size == 0:
        raise InvalidArgumentError("empty probability series")
    if np.any((v < 0) | (v > 1)) or not np.all(np.isfinite(v)):
        raise InvalidArgumentError("probabilities must lie in [0, 1]")
    return float(-np.expm1(np.sum(np.log1p(-v)))) if np.all(v < 1) else 1.0


def independent_product_series(series) -> np.ndarray:
    """Running independence-product aggregate ``1 - prod_{k<=i} (1 - p_k)``."""
    v = as_values(series)
    if np.any((v < 0) | (v > 1)):
        raise InvalidArgumentError("probabilities must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return 0.0 - np.expm1(np.cumsum(np.log1p(-v)))
