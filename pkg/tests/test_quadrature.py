import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magheat.exceptions import ConfigurationError, NumericalError
from magheat.quadrature import (
    LineSegment,
    double_integral,
    gauss_legendre,
    line_integral,
    segment_operator,
)


@pytest.mark.parametrize("n", [1, 2, 5, 16, 40])
def test_rule_weights_and_nodes(n):
    r = gauss_legendre(n)
    assert abs(r.weights.sum() - 1) < 1e-14
    assert np.all(r.weights > 0)
    assert np.all((r.nodes > 0) & (r.nodes < 1))


def test_rule_is_immutable():
    r = gauss_legendre(8)
    with pytest.raises(ValueError):
        r.nodes[0] = 0.3


@pytest.mark.parametrize("n", [2, 3, 8])
def test_polynomial_exactness(n):
    r = gauss_legendre(n)
    for k in range(2 * n):
        assert line_integral(lambda s: s ** k, r) == pytest.approx(1 / (k + 1), abs=1e-15)


def test_line_integral_examples():
    assert line_integral(lambda s: np.ones_like(s)) == pytest.approx(1.0, abs=1e-15)
    assert line_integral(lambda s: s ** 2, gauss_legendre(2)) == pytest.approx(1 / 3, abs=1e-16)
    assert abs(line_integral(np.exp, gauss_legendre(8)) - (math.e - 1)) < 1e-12


def test_double_integral_examples():
    assert double_integral(lambda t, s: np.ones(np.broadcast(t, s).shape)) == pytest.approx(1.0)
    assert double_integral(lambda t, s: t * s) == pytest.approx(0.25, abs=1e-15)
    want = (1 - math.cos(1)) * math.sin(1)
    assert abs(double_integral(lambda t, s: np.sin(t) * np.cos(s)) - want) < 1e-12


def test_vector_valued_integrand():
    out = line_integral(lambda s: np.stack([s, s ** 2, np.ones_like(s)], axis=-1))
    np.testing.assert_allclose(out, [0.5, 1 / 3, 1.0], atol=1e-15)


def test_nonfinite_integrand_names_node():
    with pytest.raises(NumericalError, match="s="):
        line_integral(lambda s: 1 / (s - s[3]), gauss_legendre(8))


def test_self_convergence():
    fs = [np.exp, lambda s: np.sin(3 * s) * np.cos(s), lambda s: 1 / (1 + s ** 2)]
    for f in fs:
        assert abs(line_integral(f, gauss_legendre(16)) - line_integral(f, gauss_legendre(32))) < 1e-10
    g = lambda t, s: np.exp(t * s) * np.cos(t - s)  # noqa: E731
    assert abs(double_integral(g, gauss_legendre(12)) - double_integral(g, gauss_legendre(24))) < 1e-10


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_linearity(a, b):
    f, g = np.exp, np.cos
    lhs = line_integral(lambda s: a * f(s) + b * g(s))
    rhs = a * line_integral(f) + b * line_integral(g)
    assert abs(lhs - rhs) <= 1e-14 * (1 + abs(a) + abs(b))


def test_segment_endpoints_exact():
    x = np.array([0.1, 0.7, -0.3])
    y = np.array([1 / 3, 2 / 7, 5.0])
    seg = LineSegment(x, y)
    assert np.array_equal(seg.point(1.0), x)
    assert np.array_equal(seg.point(0.0), y)
    np.testing.assert_array_equal(seg.velocity, x - y)
    pts = seg.point(np.array([0.0, 0.5, 1.0]))
    assert np.array_equal(pts[0], y) and np.array_equal(pts[2], x)


@pytest.mark.parametrize("power", [0, 1, 3])
def test_segment_operator_on_polynomials(power):
    sigma, Q = segment_operator(12, power)
    assert sigma[0] == 0 and sigma[-1] == 1
    f = lambda z: 1 + z - 2 * z ** 3 + z ** 5  # noqa: E731
    # int_0^1 s^p f(s sigma) ds for the monomials
    coef = {0: 1, 1: 1, 3: -2, 5: 1}
    want = sum(c * sigma ** m / (m + power + 1) for m, c in coef.items())
    np.testing.assert_allclose(Q @ f(sigma), want, atol=1e-14)


def test_segment_operator_needs_two_nodes():
    with pytest.raises(ConfigurationError):
        segment_operator(1, 0)
