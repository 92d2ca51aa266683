import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collprob.errors import InvalidArgumentError, NumericDomainError
from collprob.gaussian import std_normal_pdf
from collprob.quadrature import DEFAULT_ORDER, gauss_legendre, integrate


def test_default_order():
    assert DEFAULT_ORDER == 51


def test_two_point_rule():
    r = gauss_legendre(2)
    np.testing.assert_allclose(r.nodes, [-1 / math.sqrt(3), 1 / math.sqrt(3)], rtol=0, atol=1e-15)
    np.testing.assert_allclose(r.weights, [1.0, 1.0], rtol=0, atol=1e-15)


def test_one_point_rule():
    r = gauss_legendre(1)
    assert r.nodes.tolist() == [0.0] and r.weights.tolist() == [2.0]


@pytest.mark.parametrize("order", [2, 8, 51, 64])
def test_rule_invariants(order):
    r = gauss_legendre(order)
    assert abs(r.weights.sum() - 2.0) < 1e-13
    assert np.all(np.diff(r.nodes) > 0)
    assert np.max(np.abs(r.nodes + r.nodes[::-1])) < 1e-13
    assert np.all(r.weights > 0)


def test_order_51_integrates_x100():
    r = gauss_legendre(51)
    assert abs(integrate(r, lambda x: x**100, -1, 1) - 2 / 101) / (2 / 101) < 1e-12


@pytest.mark.parametrize("order", [2, 8, 51])
def test_exactness(order):
    r = gauss_legendre(order)
    for d in range(2 * order):
        exact = 2 / (d + 1) if d % 2 == 0 else 0.0
        assert abs(integrate(r, lambda x: x**d, -1, 1) - exact) <= 1e-12 * (2 / (d + 1))


def test_integrate_examples():
    r = gauss_legendre(51)
    assert abs(integrate(r, lambda x: x * x, 0, 1) - 1 / 3) < 1e-15
    assert abs(integrate(r, lambda x: x * x, 1, 0) + 1 / 3) < 1e-15
    assert abs(integrate(r, std_normal_pdf, -6, 6) - math.erf(6 / math.sqrt(2))) < 1e-9


def test_non_finite_integrand():
    with pytest.raises(NumericDomainError), np.errstate(divide="ignore", invalid="ignore"):
        integrate(gauss_legendre(5), lambda x: np.log(x), -1, 1)


def test_invalid_order():
    for bad in (0, -3, 2.5):
        with pytest.raises(InvalidArgumentError):
            gauss_legendre(bad)


def test_cache_is_shared_under_concurrency():
    out = []
    threads = [threading.Thread(target=lambda: out.append(gauss_legendre(97))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r is out[0] for r in out)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_linearity_and_additivity(alpha, beta, a, b, c):
    r = gauss_legendre(51)
    f, g = np.sin, lambda x: np.exp(-x * x)
    lhs = integrate(r, lambda x: alpha * f(x) + beta * g(x), a, b)
    rhs = alpha * integrate(r, f, a, b) + beta * integrate(r, g, a, b)
    assert abs(lhs - rhs) < 1e-13 * (1 + abs(alpha) + abs(beta)) * max(1.0, abs(b - a))
    assert abs(integrate(r, g, a, b) - integrate(r, g, a, c) - integrate(r, g, c, b)) < 1e-10


@pytest.mark.parametrize("order", [3, 20, 51, 100])
def test_matches_numpy_leggauss(order):
    x, w = np.polynomial.legendre.leggauss(order)
    r = gauss_legendre(order)
    assert np.max(np.abs(r.nodes - x)) < 1e-14 and np.max(np.abs(r.weights - w)) < 1e-14
