import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magheat.exceptions import ConfigurationError, JetEvaluationError
from magheat.fields import (
    FieldConfig,
    constant_field,
    eval_jet,
    field_derivative_jet,
    free_field,
    gradient_expr,
    magnetic_field,
    parse_expr,
)
from magheat.jets import TaylorJet, multi_indices, n_coeffs

from strategies import field_exprs, points


def test_multi_indices_graded():
    idx = multi_indices(2, 2)
    assert idx == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    assert n_coeffs(3, 4) == math.comb(7, 3)
    assert all(len(a) == 3 for a in multi_indices(3, 3))


def test_square_at_three():
    j = eval_jet(parse_expr("(^ x1 2)", 2), [3.0, 0.0], 2)
    assert j[(0, 0)] == 9 and j[(1, 0)] == 6 and j[(2, 0)] == 2
    assert j[(0, 1)] == 0 and j[(1, 1)] == 0 and j[(0, 2)] == 0


def test_sine_of_x2():
    j = eval_jet(parse_expr("(sin x2)", 2), [0.0, 0.0], 1)
    assert j.value == 0 and j[(0, 1)] == 1 and j[(1, 0)] == 0


def test_exp_of_product():
    j = eval_jet(parse_expr("(exp (* x1 x2))", 2), [1.0, 1.0], 2)
    e = math.e
    assert j.value == pytest.approx(e)
    assert j[(1, 0)] == pytest.approx(e)
    assert j[(1, 1)] == pytest.approx(2 * e)
    # finite-difference cross-check of the mixed derivative
    f = lambda a, b: math.exp(a * b)  # noqa: E731
    h = 1e-5
    fd = (f(1 + h, 1 + h) - f(1 + h, 1 - h) - f(1 - h, 1 + h) + f(1 - h, 1 - h)) / (4 * h * h)
    assert j[(1, 1)].real == pytest.approx(fd, rel=1e-5)


def test_raw_derivative_convention():
    # stored coefficients are raw derivatives; taylor() divides by alpha!
    j = eval_jet(parse_expr("(^ x1 3)", 2), [1.0, 0.0], 3)
    assert j[(3, 0)] == 6
    assert j.taylor()[multi_indices(2, 3).index((3, 0))] == 1


def test_division_by_zero_names_node():
    with pytest.raises(JetEvaluationError, match=r"\(/ 1 x1\).*x=\[0.0, 2.0\]"):
        eval_jet(parse_expr("(/ 1 x1)", 2), [0.0, 2.0], 1)


def test_parse_errors_report_column():
    with pytest.raises(ConfigurationError, match="column 2"):
        parse_expr("(+ )", 2)
    with pytest.raises(ConfigurationError, match="x3"):
        parse_expr("(+ x1 x3)", 2)
    with pytest.raises(ConfigurationError, match="integer exponent"):
        parse_expr("(^ x1 1.5)", 2)
    with pytest.raises(ConfigurationError):
        parse_expr("(foo x1)", 2)


def test_roundtrip_string():
    text = "(+ (* 0.5 x1 x2) (sin (- x2 pi)) (^ x1 3))"
    e = parse_expr(text, 2)
    again = parse_expr(e.to_string(), 2)
    pts = np.array([[0.3, -0.7], [1.1, 0.2]])
    np.testing.assert_allclose(e(pts), again(pts), rtol=0, atol=1e-15)


def test_vectorized_batches_match_pointwise(rng):
    e = parse_expr("(* (exp x1) (cos (* x1 x2)))", 2)
    pts = rng.normal(size=(4, 3, 2))
    jb = eval_jet(e, pts, 2)
    for i in range(4):
        for k in range(3):
            jp = eval_jet(e, pts[i, k], 2)
            np.testing.assert_allclose(jb.coeffs[:, i, k], jp.coeffs, rtol=1e-14)


def test_symmetric_gauge_field():
    B = magnetic_field(constant_field(1.0), [0.4, -2.0])
    assert B[1, 0] == 1 and B[0, 1] == -1


def test_pure_gauge_xy_has_no_field():
    A = gradient_expr(parse_expr("(* x1 x2)", 2), 2)
    cfg = FieldConfig(d=2, V="0", A=A)
    assert np.all(magnetic_field(cfg, [0.3, 0.9]) == 0)


def test_field_of_quadratic_potential():
    cfg = FieldConfig(d=2, V="0", A=("0", "(^ x1 2)"))
    assert magnetic_field(cfg, [2.0, 5.0])[1, 0] == 4


def test_field_derivative_jets():
    j = field_derivative_jet(constant_field(2.5), ("B", 2, 1), [0.1, 0.2], 3)
    assert j.value == 2.5 and np.all(j.coeffs[1:] == 0)
    j = field_derivative_jet(free_field(2), ("A", 1), [0.1, 0.2], 2)
    assert np.all(j.coeffs == 0)
    j = field_derivative_jet(FieldConfig(d=2, V="(^ x1 4)", A=("0", "0")), "V", [1.0, 0.0], 2)
    assert (j.value, j[(1, 0)], j[(2, 0)]) == (1, 4, 12)
    with pytest.raises(ConfigurationError, match="jet_cap"):
        field_derivative_jet(constant_field(1.0, jet_cap=3), "V", [0, 0], 4)


def test_field_jets_consistent_with_A_jets(rng):
    cfg = FieldConfig(d=3, V="0", A=("(* x2 x3)", "(sin (* x1 x3))", "(^ x1 3)"))
    p = rng.normal(size=3)
    B = field_derivative_jet(cfg, ("B", 1, 2), p, 2)
    A = cfg.vector_potential_jets(p, 3)
    want = A[0].deriv(1) - A[1].deriv(0)
    np.testing.assert_allclose(B.coeffs, want.coeffs, atol=1e-14)


def test_jet_algebra_functions(rng):
    p = rng.normal(size=(5, 2))
    u = eval_jet(parse_expr("(+ 2 (sin x1) (* x1 x2))", 2), p, 3)
    np.testing.assert_allclose((u * u.reciprocal()).coeffs[0], 1, rtol=1e-14)
    np.testing.assert_allclose((u * u.reciprocal()).coeffs[1:], 0, atol=1e-12)
    s, c = u.sin(), u.cos()
    one = s * s + c * c
    np.testing.assert_allclose(one.coeffs[0], 1, rtol=1e-14)
    np.testing.assert_allclose(one.coeffs[1:], 0, atol=1e-11)
    np.testing.assert_allclose((u ** 3).coeffs, (u * u * u).coeffs, rtol=1e-12)
    np.testing.assert_allclose((u.exp() * (-u).exp()).coeffs[1:], 0, atol=1e-10)


def test_scaled_and_deriv():
    # f(x) = x1^2 x2 at p; jet of h -> f(p + s h) has degree-m terms scaled by s^m
    j = eval_jet(parse_expr("(* x1 x1 x2)", 2), [1.0, 2.0], 3)
    s = 0.5
    js = j.scaled(s)
    for a, c, cs in zip(j.alphas, j.coeffs, js.coeffs):
        assert cs == pytest.approx(c * s ** sum(a))
    d1 = j.deriv(0)
    assert d1.order == 2 and d1.value == pytest.approx(4.0)    # 2 x1 x2
    assert j.laplacian().value == pytest.approx(4.0)             # 2 x2


@given(field_exprs(), points())
def test_jets_match_finite_differences(expr, p):
    p = np.asarray(p)
    j = eval_jet(expr, p, 2)
    f = lambda q: complex(expr(np.asarray(q)))  # noqa: E731
    h = 1e-4
    scale = max(1.0, abs(j.value), float(np.max(np.abs(j.coeffs))))
    if not np.isfinite(scale) or scale > 1e6:
        return
    for a in range(2):
        ea = np.eye(2)[a] * h
        fd1 = (f(p + ea) - f(p - ea)) / (2 * h)
        d1 = j[tuple(np.eye(2, dtype=int)[a])]
        assert abs(d1 - fd1) <= 1e-6 * scale
        for b in range(2):
            eb = np.eye(2)[b] * h
            fd2 = (f(p + ea + eb) - f(p + ea - eb) - f(p - ea + eb) + f(p - ea - eb)) / (4 * h * h)
            alpha = tuple(np.eye(2, dtype=int)[a] + np.eye(2, dtype=int)[b])
            assert abs(j[alpha] - fd2) <= 1e-6 * scale


@given(field_exprs(), field_exprs(), points())
def test_leibniz(f, g, p):
    p = np.asarray(p)
    prod = eval_jet(f * g, p, 3)
    ref = eval_jet(f, p, 3) * eval_jet(g, p, 3)
    scale = max(1.0, float(np.max(np.abs(ref.coeffs))))
    np.testing.assert_allclose(prod.coeffs, ref.coeffs, rtol=0, atol=1e-12 * scale)


@given(field_exprs(max_leaves=4), points(bound=2.0))
def test_pure_gauge_has_zero_field(chi, p):
    cfg = FieldConfig(d=2, V="0", A=gradient_expr(chi, 2))
    B = magnetic_field(cfg, np.asarray(p))
    scale = max(1.0, float(np.max(np.abs(np.stack([a(np.asarray(p)) for a in cfg.A])))))
    assert np.max(np.abs(B)) <= 1e-12 * scale


@given(st.lists(field_exprs(d=3, max_leaves=4), min_size=3, max_size=3), points(d=3))
def test_field_is_exactly_antisymmetric(A, p):
    cfg = FieldConfig(d=3, V="0", A=tuple(A))
    B = magnetic_field(cfg, np.asarray(p))
    assert np.array_equal(B, -np.swapaxes(B, -1, -2))


def test_jet_order_mismatch_rejected():
    with pytest.raises(ValueError):
        TaylorJet(2, 2, np.zeros(3))
