"""Gauss-Legendre quadrature rules."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, NumericDomainError

DEFAULT_ORDER = 51


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)

    def scaled(self, a, b):
        """Nodes and weights mapped from [-1, 1] onto [a, b].

        Broadcasts over array-valued ``a`` and ``b``: the node axis is last.
        """
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        half = 0.5 * (b - a)
        return 0.5 * (a + b) + half * self.nodes, half * self.weights


def _legendre_and_derivative(n: int, x: np.ndarray):
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def _compute_rule(order: int) -> QuadratureRule:
    if order == 1:
        return QuadratureRule(np.array([0.0]), np.array([2.0]))
    k = np.arange(1, order + 1)
    # Chebyshev-like initial guesses, descending; flipped to ascending below.
    x = np.cos(np.pi * (k - 0.25) / (order + 0.5))
    for _ in range(100):
        p, dp = _legendre_and_derivative(order, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    _, dp = _legendre_and_derivative(order, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    x = x[::-1].copy()
    w = w[::-1].copy()
    # enforce exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    if order % 2:
        x[order // 2] = 0.0
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w)


_cache: dict[int, QuadratureRule] = {}
_lock = threading.Lock()


def gauss_legendre(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Return the cached ``order``-point Gauss-Legendre rule on [-1, 1]."""
    if int(order) != order or order < 1:
        raise InvalidArgumentError(f"quadrature order must be a positive integer, got {order!r}")
    order = int(order)
    rule = _cache.get(order)
    if rule is None:
        with _lock:
            rule = _cache.get(order)
            if rule is None:
                rule = _compute_rule(order)
                _cache[order] = rule
    return rule


def integrate(rule: QuadratureRule, f: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> float:
    """Integrate ``f`` over [a, b]; ``f`` is called once with the array of mapped nodes.

    ``a > b`` gives the negated integral.
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise InvalidArgumentError("integration limits must be finite")
    x, w = rule.scaled(a, b)
    fx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise NumericDomainError("integrand is not finite at a quadrature node")
    return float(np.sum(w * fx))
