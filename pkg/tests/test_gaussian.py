import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collprob.errors import DegenerateCovarianceError, InvalidArgumentError
from collprob.gaussian import (
    GaussianND,
    PoseVelocityGaussian,
    conditional_normal_velocity,
    erf,
    expected_inward_speed,
    marginal_pose,
    relative_state,
    std_normal_cdf,
    std_normal_pdf,
    unwhiten,
    apply_whitening,
    whiten,
)
from collprob.prediction import build_scenario


def random_spd(rng, d, cond=None):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    lam = np.geomspace(1.0, cond, d) if cond else rng.uniform(0.1, 3.0, d)
    return (q * lam) @ q.T


def test_standard_normal_values():
    assert std_normal_cdf(0.0) == 0.5
    assert erf(0.0) == 0.0
    assert abs(std_normal_pdf(0.0) - 0.3989422804) < 1e-10
    assert abs(std_normal_cdf(1.96) - 0.9750021048517795) < 1e-14


def test_marginal_pose_of_diagonal():
    g = PoseVelocityGaussian(np.arange(5.0), np.diag([1.0, 2, 3, 4, 5]))
    m = marginal_pose(g)
    assert m.mean.tolist() == [0, 1, 2] and np.diag(m.cov).tolist() == [1, 2, 3]


def test_marginal_pose_of_table_ego():
    ego = build_scenario(1).ego.initial
    m = marginal_pose(ego)
    assert m.mean.tolist() == [0.0, 0.0, math.pi]
    np.testing.assert_array_equal(m.cov, np.diag([0.1**2, 0.05**2, 0.0]))


def test_marginal_pose_matches_sampling():
    rng = np.random.default_rng(0)
    cov = random_spd(rng, 5)
    g = PoseVelocityGaussian(rng.normal(size=5), cov)
    x = rng.multivariate_normal(g.mean, g.cov, size=1_000_000)[:, :3]
    m = marginal_pose(g)
    se = np.sqrt(np.diag(m.cov) / len(x))
    assert np.all(np.abs(x.mean(axis=0) - m.mean) < 3 * se)
    sd = np.sqrt(np.outer(np.diag(m.cov), np.diag(m.cov)) + m.cov**2) / math.sqrt(len(x))  # se of covariances
    assert np.all(np.abs(np.cov(x.T) - m.cov) < 3 * sd)


def test_relative_state_scenario_1():
    spec = build_scenario(1)
    rel = relative_state(spec.ego.initial, spec.obstacles[0].initial)
    np.testing.assert_allclose(rel.mean[:2], [5.5, 5.5])
    np.testing.assert_allclose(rel.cov[:2, :2], np.diag([0.05, 0.0125]), rtol=0, atol=1e-15)


def test_relative_state_of_identical_agents():
    rng = np.random.default_rng(1)
    g = PoseVelocityGaussian(rng.normal(size=5), random_spd(rng, 5))
    rel = relative_state(g, g)
    assert np.all(rel.mean == 0) and np.array_equal(rel.cov, g.cov + g.cov)


def test_whiten_examples():
    t = whiten(GaussianND([1.0, 2.0], np.eye(2)))
    assert np.array_equal(t.matrix, np.eye(2)) and t.mean_offset.tolist() == [-1.0, -2.0]
    np.testing.assert_allclose(whiten(GaussianND([0, 0], np.diag([4.0, 1.0]))).matrix, np.diag([0.5, 1.0]))
    assert np.array_equal(apply_whitening(whiten(GaussianND([0, 0], np.eye(2))), [[3.0, 4.0]]), [[3.0, 4.0]])


def test_whiten_is_lower_triangular_in_coordinate_order():
    rng = np.random.default_rng(2)
    g = GaussianND(np.zeros(3), random_spd(rng, 3))
    t = whiten(g, (2, 0, 1))
    assert np.all(np.triu(t.matrix, 1) == 0)
    cov = g.cov[np.ix_([2, 0, 1], [2, 0, 1])]
    assert np.max(np.abs(t.matrix @ cov @ t.matrix.T - np.eye(3))) < 1e-10


def test_whiten_high_condition_numbers():
    rng = np.random.default_rng(3)
    for _ in range(200):
        d = int(rng.integers(2, 4))
        cov = random_spd(rng, d, cond=1e6)
        w = whiten(GaussianND(np.zeros(d), cov)).matrix
        assert np.max(np.abs(w @ cov @ w.T - np.eye(d))) < 1e-10


def test_whiten_round_trip():
    rng = np.random.default_rng(4)
    t = whiten(GaussianND(rng.normal(size=3), random_spd(rng, 3)))
    p = rng.normal(size=(10_000, 3)) * 10
    assert np.max(np.abs(unwhiten(t, apply_whitening(t, p)) - p)) < 1e-12 * 100


def test_whiten_degenerate_names_direction():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(DegenerateCovarianceError) as exc:
        whiten(GaussianND([0, 0], cov))
    d = np.asarray(exc.value.direction)
    assert abs(abs(d @ np.array([1, -1]) / math.sqrt(2)) - 1) < 1e-9


def test_whitening_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        apply_whitening(whiten(GaussianND([0, 0], np.eye(2))), [[1.0, 2.0, 3.0]])


def test_invalid_gaussians_rejected():
    with pytest.raises(InvalidArgumentError):
        GaussianND([0, 0], np.eye(3))
    with pytest.raises(InvalidArgumentError):
        GaussianND([0, 0], [[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(InvalidArgumentError):
        GaussianND([0, 0], [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(InvalidArgumentError):
        PoseVelocityGaussian([0, 0, 0], np.eye(3))


def test_conditional_normal_velocity_uncorrelated():
    cov = np.diag([0.3, 0.2, 0.01, 0.5, 0.5])
    rel = PoseVelocityGaussian([1, 2, 0, 3, -1], cov)
    for x in ([0, 0], [5, -3]):
        assert conditional_normal_velocity(rel, x, [1, 0]) == pytest.approx((3.0, math.sqrt(0.5)), abs=1e-15)
    n = np.array([0.6, 0.8])
    mu, sd = conditional_normal_velocity(rel, [1, 1], n)
    assert mu == pytest.approx(n @ [3, -1]) and sd == pytest.approx(math.sqrt(0.5))


def test_conditional_normal_velocity_singular_position():
    cov = np.diag([0.0, 0.2, 0.0, 0.5, 0.5])
    with pytest.raises(DegenerateCovarianceError):
        conditional_normal_velocity(PoseVelocityGaussian([0] * 5, cov), [0, 0], [1, 0])


def test_conditioning_never_increases_variance():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        cov = random_spd(rng, 5)
        n = rng.normal(size=2)
        n /= np.linalg.norm(n)
        _, sd = conditional_normal_velocity(PoseVelocityGaussian(np.zeros(5), cov), [0, 0], n)
        assert sd**2 <= n @ cov[3:, 3:] @ n + 1e-12


def test_expected_inward_speed_examples():
    assert abs(expected_inward_speed(0.0, 1.0) - 0.3989422804014327) < 1e-15
    assert expected_inward_speed(-2.0, 0.0) == 2.0
    assert expected_inward_speed(-2.0, 1e-12) == pytest.approx(2.0)
    assert expected_inward_speed(2.0, 0.0) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 10))
def test_expected_inward_speed_limits(sigma):
    assert expected_inward_speed(8 * sigma, sigma) < 1e-6 * sigma
    assert abs(expected_inward_speed(-8 * sigma, sigma) - 8 * sigma) < 1e-6 * sigma
    mus = np.linspace(-5, 5, 101) * sigma
    assert np.all(np.diff(expected_inward_speed(mus, np.full_like(mus, sigma))) <= 1e-15)
