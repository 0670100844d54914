"""Fixed Gauss-Legendre rules on [0, 1] and straight-line segments."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, NumericalError

__all__ = [
    "QuadratureRule",
    "gauss_legendre",
    "LineSegment",
    "line_integral",
    "double_integral",
    "segment_operator",
    "DEFAULT_LINE_NODES",
    "DEFAULT_DOUBLE_NODES",
]

DEFAULT_LINE_NODES = 16
DEFAULT_DOUBLE_NODES = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in (0, 1) and positive weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n(self):
        return len(self.nodes)


@functools.lru_cache(maxsize=None)
def gauss_legendre(n: int = DEFAULT_LINE_NODES) -> QuadratureRule:
    """``n``-point Gauss-Legendre rule mapped to [0, 1]; exact to degree 2n-1."""
    if n < 1:
        raise ConfigurationError("quadrature needs at least one node")
    z, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (z + 1.0), 0.5 * w)


@dataclass(frozen=True)
class LineSegment:
    """The segment ``s -> y + s (x - y)`` from ``y`` (s=0) to ``x`` (s=1)."""

    x: np.ndarray
    y: np.ndarray

    def __init__(self, x, y):
        object.__setattr__(self, "x", np.asarray(x, dtype=float))
        object.__setattr__(self, "y", np.asarray(y, dtype=float))

    @property
    def velocity(self):
        return self.x - self.y

    def point(self, s):
        s = np.asarray(s, dtype=float)
        pt = self.y + s[..., None] * (self.x - self.y)
        # endpoints reproduced bit-for-bit
        pt = np.where((s == 1.0)[..., None], self.x, pt)
        return np.where((s == 0.0)[..., None], self.y, pt)


def _check_finite(vals, nodes):
    vals = np.asarray(vals)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = np.argwhere(bad.reshape(len(nodes), -1).any(axis=1))[0, 0]
        raise NumericalError(f"non-finite integrand at s={nodes[idx]!r}")
    return vals


def line_integral(f, rule: QuadratureRule | None = None):
    """Approximate ``int_0^1 f(s) ds``; ``f`` must accept an array of nodes.

    Vector-valued integrands are allowed as long as the node axis comes first.
    """
    rule = rule or gauss_legendre()
    vals = _check_finite(f(rule.nodes), rule.nodes)
    return np.tensordot(rule.weights, vals, axes=(0, 0))


def double_integral(f, rule: QuadratureRule | None = None):
    """Tensor-product rule for ``int_0^1 int_0^1 f(t, s) dt ds``.

    ``f`` is called once with broadcast node grids ``t[:, None]``, ``s[None, :]``.
    """
    rule = rule or gauss_legendre(DEFAULT_DOUBLE_NODES)
    t, s = rule.nodes[:, None], rule.nodes[None, :]
    vals = np.asarray(f(t, s))
    vals = np.broadcast_to(vals, (rule.n, rule.n) + vals.shape[2:])
    _check_finite(vals.reshape((rule.n * rule.n,) + vals.shape[2:]),
                  np.repeat(rule.nodes, rule.n))
    return np.tensordot(rule.weights, np.tensordot(rule.weights, vals, axes=(0, 0)), axes=(0, 0))


@functools.lru_cache(maxsize=None)
def _lobatto_nodes(n):
    # Chebyshev-Lobatto points on [0, 1], increasing, endpoints included
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(np.pi * k / (n - 1)))


@functools.lru_cache(maxsize=None)
def segment_operator(n: int, power: int) -> tuple[np.ndarray, np.ndarray]:
    """Collocation matrix for ``(T f)(sigma) = int_0^1 s^power f(s sigma) ds``.

    Returns ``(sigma, Q)`` where ``sigma`` are ``n`` Chebyshev-Lobatto nodes on
    [0, 1] and ``Q[a, b] = int_0^1 s^power l_b(s sigma_a) ds`` with ``l_b`` the
    Lagrange basis on ``sigma``.  Applying ``Q`` to samples of a smooth ``f``
    is Gauss-Legendre quadrature of its polynomial interpolant, exact when
    ``f`` is a polynomial of degree < n.
    """
    if n < 2:
        raise ConfigurationError("segment collocation needs at least two nodes")
    sigma = _lobatto_nodes(n)
    rule = gauss_legendre((n + power) // 2 + 2)
    pts = rule.nodes[:, None] * sigma[None, :]            # (q, a)
    L = _lagrange_basis(sigma, pts.ravel()).reshape(rule.n, n, n)  # (q, a, b)
    Q = np.einsum("q,q,qab->ab", rule.weights, rule.nodes ** power, L)
    sigma.setflags(write=False)
    Q.setflags(write=False)
    return sigma, Q


def _lagrange_basis(nodes, pts):
    # barycentric form, weights for Chebyshev-Lobatto points
    n = len(nodes)
    w = np.array([(-1.0) ** j for j in range(n)])
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = pts[:, None] - nodes[None, :]
    exact = diff == 0
    diff[exact] = 1.0
    terms = w / diff
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L
