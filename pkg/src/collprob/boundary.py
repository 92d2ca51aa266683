"""Collision probability from boundary-crossing rates of the relative state.

The crossing rate at one instant is the expected inward probability flux
through the collision-volume boundary,

    rate = sum_i  l_i * int_0^1 E[max(-n_i . v, 0) | x_i(s)] p(x_i(s)) ds,

with outward edge normals ``n_i``. Integrating the rate over time counts
expected entries; added to the mass already inside the volume at the first
instant, this bounds the first-passage probability from above.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

from .errors import InvalidArgumentError
from .gaussian import INV_SQRT_2PI, PoseVelocityGaussian, expected_inward_speed
from .geometry import ConvexPolygon, Shape, Vec2, rect_minkowski_vertices
from .overlap import NEGLIGIBLE, HeadingRows, OverlapConfig, overlap_series_values, _step_count, check_positional_covs, heading_rows, relative_series, tail_exponent
from .prediction import GaussianTrajectory, cv_transition
from .quadrature import DEFAULT_ORDER, QuadratureRule, gauss_legendre
from .series import ProbabilityTimeSeries

log = logging.getLogger(__name__)

# edge parameters further than this many Mahalanobis units from the density
# peak along the edge are dropped
EDGE_CUTOFF = 9.0
# edges whose closest point is further than sqrt(EDGE_MAHA_MAX) standard
# deviations away contribute less than exp(-45) of the peak density
EDGE_MAHA_MAX = 90.0
PAIR_BLOCK = 512


@dataclass(frozen=True)
class CrossingConfig:
    quadrature_order: int = DEFAULT_ORDER
    theta_truncation: float = 4.0
    theta_enabled: bool = True
    clamp_to_unity: bool = True
    time_substeps: int = 4
    refine_tol: float = 1e-3
    include_initial_overlap: bool = True

    def __post_init__(self):
        if self.quadrature_order < 2:
            raise InvalidArgumentError("quadrature order must be at least 2")
        if not self.theta_truncation > 0:
            raise InvalidArgumentError("theta truncation must be positive")
        if self.time_substeps < 1:
            raise InvalidArgumentError("time_substeps must be >= 1")
        if not self.refine_tol >= 0:
            raise InvalidArgumentError("refine_tol must be non-negative")

    @property
    def rule(self) -> QuadratureRule:
        return gauss_legendre(self.quadrature_order)


class EdgeParametrization(NamedTuple):
    start: Vec2
    end: Vec2
    outward_normal: Vec2
    length: float


def edge_parametrization(volume: ConvexPolygon) -> list[EdgeParametrization]:
    """Edges of a counterclockwise polygon with outward unit normals."""
    out = []
    v = volume.vertices
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        e = b - a
        length = float(np.hypot(e[0], e[1]))
        out.append(EdgeParametrization(Vec2(*a), Vec2(*b), Vec2(e[1] / length, -e[0] / length), length))
    return out


def crossing_kernel(mean4: np.ndarray, cov4: np.ndarray, vertices: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """Inward crossing rate for stacks of ``(x, y, vx, vy)`` Gaussians and polygons.

    Shapes: ``mean4 (R, 4)``, ``cov4 (R, 4, 4)``, ``vertices (R, n, 2)``.
    """
    sx = cov4[:, :2, :2]
    check_positional_covs(sx)
    c00, c01, c11 = sx[:, 0, 0], sx[:, 0, 1], sx[:, 1, 1]
    det = c00 * c11 - c01 * c01
    p00, p01, p11 = c11 / det, -c01 / det, c00 / det
    # gain G = Sigma_vx Sigma_x^-1 and conditional velocity covariance
    svx = cov4[:, 2:, :2]
    g = np.empty_like(svx)
    g[:, :, 0] = svx[:, :, 0] * p00[:, None] + svx[:, :, 1] * p01[:, None]
    g[:, :, 1] = svx[:, :, 0] * p01[:, None] + svx[:, :, 1] * p11[:, None]
    cond = cov4[:, 2:, 2:] - g @ np.swapaxes(svx, -1, -2)

    e = np.roll(vertices, -1, axis=1) - vertices
    ex, ey = e[..., 0], e[..., 1]
    length = np.hypot(ex, ey)
    dx = vertices[..., 0] - mean4[:, None, 0]
    dy = vertices[..., 1] - mean4[:, None, 1]
    P00, P01, P11 = p00[:, None], p01[:, None], p11[:, None]
    pex, pey = P00 * ex + P01 * ey, P01 * ex + P11 * ey
    quad_a = ex * pex + ey * pey
    quad_b = dx * pex + dy * pey
    quad_c = P00 * dx * dx + 2.0 * P01 * dx * dy + P11 * dy * dy
    qa = np.where(quad_a > 0, quad_a, 1.0)
    # smallest squared Mahalanobis distance of the density centre to each edge
    s_peak = -quad_b / qa
    s_min = np.clip(s_peak, 0.0, 1.0)
    maha_min = quad_c + 2.0 * s_min * quad_b + s_min * s_min * quad_a
    r_idx, n_idx = np.nonzero((length > 0) & (maha_min < EDGE_MAHA_MAX))
    if r_idx.size == 0:
        return np.zeros(len(mean4))

    # one row per live (state, edge) pair; along the edge x(s) = a + s e the
    # squared Mahalanobis distance is quadratic and the conditional normal
    # velocity mean is linear in s
    ex, ey, length = ex[r_idx, n_idx], ey[r_idx, n_idx], length[r_idx, n_idx]
    dx, dy = dx[r_idx, n_idx], dy[r_idx, n_idx]
    qa, qb, qc, s_peak = qa[r_idx, n_idx], quad_b[r_idx, n_idx], quad_c[r_idx, n_idx], s_peak[r_idx, n_idx]
    nx, ny = ey / length, -ex / length
    gr, cr, mr = g[r_idx], cond[r_idx], mean4[r_idx]
    gnx = nx * gr[:, 0, 0] + ny * gr[:, 1, 0]  # n^T G
    gny = nx * gr[:, 0, 1] + ny * gr[:, 1, 1]
    alpha = nx * mr[:, 2] + ny * mr[:, 3] + gnx * dx + gny * dy
    beta = gnx * ex + gny * ey
    sig_n = np.sqrt(np.maximum(nx * nx * cr[:, 0, 0] + 2.0 * nx * ny * cr[:, 0, 1] + ny * ny * cr[:, 1, 1], 0.0))

    half = EDGE_CUTOFF / np.sqrt(qa)
    lo, hi = np.clip(s_peak - half, 0.0, 1.0), np.clip(s_peak + half, 0.0, 1.0)
    hw = 0.5 * (hi - lo)
    mid = 0.5 * (lo + hi)
    edge_sum = np.empty(len(r_idx))
    # node arrays are evaluated in blocks of pairs that stay in cache
    for b in range(0, len(r_idx), PAIR_BLOCK):
        sl = slice(b, b + PAIR_BLOCK)
        edge_sum[sl] = _edge_integrals(mid[sl], hw[sl], qa[sl], qb[sl], qc[sl], alpha[sl], beta[sl], sig_n[sl], rule)
    scale = length * hw / (2.0 * math.pi * np.sqrt(det[r_idx]))
    return np.bincount(r_idx, weights=scale * edge_sum, minlength=len(mean4))


def _edge_integrals(mid, hw, qa, qb, qc, alpha, beta, sig_n, rule: QuadratureRule) -> np.ndarray:
    """Quadrature sums of ``E[max(-v_n, 0) | x(s)] exp(-maha(s) / 2)`` over each edge window."""
    s = mid[:, None] + hw[:, None] * rule.nodes  # (P, J)
    maha = s * qa[:, None]
    maha += 2.0 * qb[:, None]
    maha *= s
    maha += qc[:, None]
    mu_n = s * beta[:, None]
    mu_n += alpha[:, None]
    if np.all(sig_n > 0):
        # E[max(-v, 0)] for v ~ N(mu, sigma^2) times the position density, inlined for speed
        z = mu_n / sig_n[:, None]
        phi = z * z
        phi += maha
        phi *= -0.5
        np.exp(phi, out=phi)
        phi *= INV_SQRT_2PI
        tail = special.ndtr(-z)
        tail *= z
        np.exp(-0.5 * maha, out=maha)
        tail *= maha
        phi -= tail
        integrand = np.maximum(phi, 0.0, out=phi)
        integrand *= sig_n[:, None]
    else:
        flux = expected_inward_speed(mu_n, np.broadcast_to(sig_n[:, None], mu_n.shape))
        integrand = flux * np.exp(-0.5 * maha)
    return integrand @ rule.weights


def crossing_rate_fixed_theta(rel: PoseVelocityGaussian, volume: ConvexPolygon, config: CrossingConfig = CrossingConfig()) -> float:
    """Crossing rate (1/s) through a fixed volume; the heading is marginalized out."""
    idx = [0, 1, 3, 4]
    r = crossing_kernel(rel.mean[None, idx], rel.cov[np.ix_(idx, idx)][None], volume.vertices[None], config.rule)
    return float(r[0])


def crossing_rate_values(means, covs, ego_headings, ego_shape, obs_shape, config: CrossingConfig = CrossingConfig()) -> np.ndarray:
    """Vectorized crossing rates for stacked relative states."""
    n = _step_count(means)
    rows: HeadingRows = heading_rows(means, covs, ego_headings, config.theta_enabled, config.theta_truncation, config.rule)
    verts = rect_minkowski_vertices(Shape(*ego_shape), rows.ego_heading, Shape(*obs_shape), rows.obs_heading)
    live = np.flatnonzero(_rate_bound(rows.mean4, rows.cov4, verts) >= NEGLIGIBLE)
    r = np.zeros(len(rows.step))
    r[live] = crossing_kernel(rows.mean4[live], rows.cov4[live], verts[live], config.rule)
    return np.bincount(rows.step, weights=rows.weight * r, minlength=n)


def _rate_bound(mean4, cov4, vertices) -> np.ndarray:
    """Upper bound on the crossing rate: perimeter x peak boundary density x inward speed."""
    sx = cov4[:, :2, :2]
    check_positional_covs(sx)
    det = sx[:, 0, 0] * sx[:, 1, 1] - sx[:, 0, 1] ** 2
    density = np.exp(-tail_exponent(mean4[:, :2], sx, vertices)) / (2.0 * math.pi * np.sqrt(det))
    e = np.roll(vertices, -1, axis=1) - vertices
    perimeter = np.hypot(e[..., 0], e[..., 1]).sum(axis=-1)
    radius = np.sqrt(np.max(np.sum(vertices * vertices, axis=-1), axis=-1))
    reach = np.hypot(mean4[:, 0], mean4[:, 1]) + radius  # bound on |x - mu| over the boundary
    gain_norm = np.sqrt(np.sum(np.linalg.solve(sx, cov4[:, :2, 2:]) ** 2, axis=(1, 2)))
    speed = np.hypot(mean4[:, 2], mean4[:, 3]) + gain_norm * reach + np.sqrt(np.trace(cov4[:, 2:, 2:], axis1=1, axis2=2))
    return perimeter * density * speed


def crossing_rate_with_orientation(
    rel: PoseVelocityGaussian, ego_shape, obs_shape, config: CrossingConfig = CrossingConfig(), ego_heading: float = 0.0
) -> float:
    return float(crossing_rate_values(rel.mean[None], rel.cov[None], ego_heading, ego_shape, obs_shape, config)[0])


def cumulative_trapezoid(rates: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral along the last axis, starting at 0."""
    rates = np.asarray(rates, dtype=float)
    inc = 0.5 * dt * (rates[..., 1:] + rates[..., :-1])
    return np.concatenate([np.zeros(rates.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)


def _interior_states(means, covs, dt: float, substeps: int):
    """States at the ``substeps - 1`` interior instants after each given state.

    Intermediate instants are reached by constant-velocity propagation from
    the preceding grid state, which is exact for trajectories built by
    :func:`collprob.prediction.propagate_cv`. Shapes: ``(M, D)`` and
    ``(M, D, D)`` in, ``(M, S-1, D)`` and ``(M, S-1, D, D)`` out.
    """
    dim = means.shape[-1]
    frac = np.arange(1, substeps) / substeps
    Fs = np.tile(np.eye(dim), (substeps - 1, 1, 1))  # extra coordinates stay constant
    Fs[:, :5, :5] = [cv_transition(f * dt) for f in frac]
    m = means @ Fs.reshape(-1, dim).T  # (M, S-1 * D)
    m = m.reshape(len(means), substeps - 1, dim)
    c = Fs @ covs[:, None] @ np.swapaxes(Fs, -1, -2)
    return m, c


def crossing_probability_values(means, covs, ego_headings, dt, ego_shape, obs_shape, config: CrossingConfig = CrossingConfig()):
    """Cumulative crossing probability on the grid of ``means`` (last-but-one axis is time).

    Rates are evaluated on the grid and integrated with the trapezoid rule.
    Intervals over which the rate changes by more than ``config.refine_tol``
    (in probability, ``|r1 - r0| dt``) are subdivided into
    ``config.time_substeps`` pieces. With ``config.include_initial_overlap``
    the series starts at the overlap probability of the first state, so mass
    that is already in collision counts as collided.

    Returns ``(probabilities, rates, clamped)`` where ``rates`` are on the grid.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    dim = means.shape[-1]
    lead, n_t = means.shape[:-2], means.shape[-2]
    ego_headings = np.broadcast_to(np.asarray(ego_headings, dtype=float), means.shape[:-1]).reshape(-1, n_t)
    means = means.reshape(-1, n_t, dim)
    covs = covs.reshape(-1, n_t, dim, dim)

    def rates_of(m, c, h):
        return crossing_rate_values(m.reshape(-1, dim), c.reshape(-1, dim, dim), h.reshape(-1), ego_shape, obs_shape, config)

    rates = rates_of(means, covs, ego_headings).reshape(-1, n_t)
    inc = 0.5 * dt * (rates[:, 1:] + rates[:, :-1])
    sub = config.time_substeps
    if sub > 1 and n_t > 1:
        b_idx, t_idx = np.nonzero(np.abs(np.diff(rates, axis=1)) * dt > config.refine_tol)
        if b_idx.size:
            im, ic = _interior_states(means[b_idx, t_idx], covs[b_idx, t_idx], dt, sub)
            ih = np.repeat(ego_headings[b_idx, t_idx], sub - 1)
            inner = rates_of(im, ic, ih).reshape(-1, sub - 1)
            nodes = np.concatenate([rates[b_idx, t_idx, None], inner, rates[b_idx, t_idx + 1, None]], axis=1)
            inc[b_idx, t_idx] = (dt / sub) * (nodes.sum(axis=1) - 0.5 * (nodes[:, 0] + nodes[:, -1]))
    start = np.zeros((len(rates), 1))
    if config.include_initial_overlap:
        ocfg = OverlapConfig(config.quadrature_order, config.theta_truncation, config.theta_enabled)
        start[:, 0] = overlap_series_values(means[:, 0], covs[:, 0], ego_headings[:, 0], ego_shape, obs_shape, ocfg)
    cum = start + np.concatenate([np.zeros((len(rates), 1)), np.cumsum(inc, axis=1)], axis=1)
    cum, rates = cum.reshape(lead + (n_t,)), rates.reshape(lead + (n_t,))
    clamped = bool(np.any(cum > 1.0))
    if config.clamp_to_unity:
        cum = np.minimum(cum, 1.0)
    return cum, rates, clamped


def crossing_probability(
    traj_rel: Sequence[PoseVelocityGaussian],
    ego_shape,
    obs_shape,
    config: CrossingConfig = CrossingConfig(),
    *,
    dt: float,
    ego_headings=0.0,
) -> ProbabilityTimeSeries:
    """Time-integrated crossing probability for a series of relative states."""
    if len(traj_rel) == 0:
        raise InvalidArgumentError("empty trajectory")
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    means = np.array([s.mean for s in traj_rel])
    covs = np.array([s.cov for s in traj_rel])
    cum, rates, clamped = crossing_probability_values(means, covs, ego_headings, dt, ego_shape, obs_shape, config)
    if clamped:
        log.info("crossing probability clamped at 1")
    return ProbabilityTimeSeries(dt * np.arange(len(cum)), cum, "boundary", {"rates": rates, "clamped": clamped})


def boundary_series(ego: GaussianTrajectory, obstacle: GaussianTrajectory, config: CrossingConfig = CrossingConfig()) -> ProbabilityTimeSeries:
    means, covs = relative_series(ego, obstacle, config.theta_enabled)
    cum, rates, clamped = crossing_probability_values(means, covs, 0.0, ego.dt, ego.shape, obstacle.shape, config)
    return ProbabilityTimeSeries(ego.times, cum, "boundary", {"rates": rates, "clamped": clamped})
