import math

import numpy as np
import pytest
from scipy import stats

from collprob.errors import DegenerateCovarianceError, InvalidArgumentError
from collprob.gaussian import GaussianND, PoseVelocityGaussian
from collprob.geometry import ConvexPolygon, RectangleSpec, collision_volume, rectangle_corners, rectangle_footprint
from collprob.overlap import (
    OverlapConfig,
    independent_product_series,
    overlap_probability_fixed_theta,
    overlap_probability_with_orientation,
    overlap_series,
    trajectory_independent_product,
    trajectory_max,
)
from collprob.prediction import build_scenario


def square(center, side):
    return rectangle_footprint(RectangleSpec(side, side, center, 0.0))


def test_enclosed_mass():
    assert overlap_probability_fixed_theta(GaussianND([0, 0], np.eye(2)), square((0, 0), 12)) >= 1 - 1e-8


def test_far_volume():
    assert overlap_probability_fixed_theta(GaussianND([0, 0], np.eye(2)), square((100, 0), 2)) <= 1e-12


def test_unit_square_closed_form():
    exact = (stats.norm.cdf(1) - stats.norm.cdf(-1)) ** 2
    got = overlap_probability_fixed_theta(GaussianND([0, 0], np.eye(2)), square((0, 0), 2))
    assert abs(got - exact) < 1e-12 and round(got, 7) == 0.4660649


def test_matches_grid_riemann_for_correlated_gaussian():
    cov = np.array([[0.8, 0.35], [0.35, 0.4]])
    mean = np.array([0.7, -0.2])
    vol = collision_volume(RectangleSpec(2, 1, (0, 0), 0.3), (1.5, 1.0), 0.6)
    xs = np.linspace(-3, 3, 1201)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.stack([gx.ravel(), gy.ravel()], 1)
    from collprob.geometry import contains_points

    mask = contains_points(vol.vertices, pts)
    riemann = stats.multivariate_normal(mean, cov).pdf(pts[mask]).sum() * (xs[1] - xs[0]) ** 2
    got = overlap_probability_fixed_theta(GaussianND(mean, cov), vol)
    assert abs(got - riemann) < 5e-3  # grid resolution limited


def test_singular_covariance_rejected():
    with pytest.raises(DegenerateCovarianceError):
        overlap_probability_fixed_theta(GaussianND([0, 0], np.diag([1.0, 0.0])), square((0, 0), 2))


def _rel(mean_theta, var_theta):
    cov = np.diag([0.3, 0.2, var_theta, 0.1, 0.1])
    return PoseVelocityGaussian([0.8, 0.0, mean_theta, 0, 0], cov)


def test_orientation_degenerate_equals_fixed_theta():
    shapes = ((2.0, 1.0), (1.5, 0.8))
    rel = _rel(0.4, 0.0)
    vol = collision_volume(RectangleSpec(2.0, 1.0), (1.5, 0.8), 0.4)
    fixed = overlap_probability_fixed_theta(GaussianND(rel.mean[:2], rel.cov[:2, :2]), vol)
    assert abs(overlap_probability_with_orientation(rel, *shapes) - fixed) < 1e-12


def test_orientation_symmetry_for_squares():
    # vol(-theta) mirrors vol(theta) about the x axis; the mean sits on that axis
    shapes = ((1.0, 1.0), (1.0, 1.0))
    a = overlap_probability_with_orientation(_rel(0.2, 0.01), *shapes)
    b = overlap_probability_with_orientation(_rel(-0.2, 0.01), *shapes)
    assert abs(a - b) < 1e-10


def test_orientation_matches_joint_monte_carlo():
    # scenario-1 footprints, relative pose near contact, sigma_theta^2 = 0.01
    cov = np.diag([0.2, 0.1, 0.01, 0.0, 0.0])
    rel = PoseVelocityGaussian([3.5, 1.5, 0.3, 0, 0], cov)
    got = overlap_probability_with_orientation(rel, (5, 2), (5, 2))
    rng = np.random.default_rng(11)
    n = 1_000_000
    s = rng.multivariate_normal(rel.mean[:3], cov[:3, :3], size=n)
    from collprob.geometry import rectangles_intersect_batch

    ego = rectangle_corners(5, 2, 0.0, 0.0, 0.0)
    obs = rectangle_corners(5, 2, s[:, 0], s[:, 1], s[:, 2])
    p = rectangles_intersect_batch(ego[None], obs).mean()
    assert abs(got - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-4  # + theta truncation at 4 sigma


def test_series_scenario_2_peak():
    spec = build_scenario(2)
    s = overlap_series(spec.ego_trajectory(), spec.obstacle_trajectories()[0], OverlapConfig(theta_enabled=False))
    peak, t = s.peak()
    assert abs(peak - 0.53) <= 0.05 and abs(t - 0.8) <= 0.2
    assert np.all((s.values >= 0) & (s.values <= 1))


def test_trajectory_max():
    assert trajectory_max([0.2] * 5) == 0.2
    assert trajectory_max([0.1, 0.53, 0.4]) == 0.53
    assert trajectory_max(np.zeros(4)) == 0.0
    with pytest.raises(InvalidArgumentError):
        trajectory_max([])


def test_independent_product():
    assert trajectory_independent_product([0.37]) == pytest.approx(0.37, abs=1e-15)
    assert trajectory_independent_product([0.2, 1.0, 0.1]) == 1.0
    assert abs(trajectory_independent_product([0.1, 0.1, 0.1]) - 0.271) < 1e-15
    with pytest.raises(InvalidArgumentError):
        trajectory_independent_product([0.5, 1.5])
    with pytest.raises(InvalidArgumentError):
        trajectory_independent_product([])
    np.testing.assert_allclose(independent_product_series([0.1, 0.1, 0.1]), [0.1, 0.19, 0.271], rtol=1e-14)
    assert not np.signbit(independent_product_series([0.0, 0.0])).any()
