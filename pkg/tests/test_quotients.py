import math

import numpy as np
import pytest

from magheat.exceptions import ConfigurationError, DomainError, NumericalError
from magheat.fields import FieldConfig, free_field
from magheat.oracle import GridSpec
from magheat.parametrix import ParametrixEvaluator, free_kernel
from magheat.quotients import (
    QuotientSpec,
    check_periodicity,
    check_reflection_symmetry,
    gaussian_tail,
    half_plane_cn,
    half_plane_jet,
    half_plane_kernel,
    image_sum_kernel,
    quotient_diagonal_expansion,
    reflect,
    torus_config,
)

SYM = FieldConfig(d=2, V="(+ (^ x2 2) (cos x1))", A=("(^ x2 2)", "(* x1 x2)"))
ASYM = FieldConfig(d=2, V="0", A=("x2", "0"))
CYL = FieldConfig(d=2, V="(cos (* 2 pi x2))", A=("(sin (* 2 pi x2))", "(* 0.3 x1)"))
TORUS = dict(V="(cos (* 2 pi x1))", A_per=("(sin (* 2 pi x2))", "(cos (* 2 pi x1))"))


def test_reflect():
    assert np.array_equal(reflect(np.array([1.0, 2.0])), [1.0, -2.0])
    z = reflect(np.array([[1 + 1j, 2j]]))
    assert z.dtype.kind == "c" and z[0, 1] == -2j


def test_spec_validation():
    assert QuotientSpec("cylinder").generators.tolist() == [[0.0, 1.0]]
    assert QuotientSpec("torus").generators.shape == (2, 2)
    for bad in (dict(kind="sphere"), dict(kind="half_plane"), dict(kind="half_plane", bc="robin"),
                dict(kind="cylinder", bc="dirichlet"), dict(kind="torus", lattice=((1, 0), (2, 0))),
                dict(kind="cylinder", lattice=((1, 0), (0, 1))), dict(kind="torus", tol=0.0),
                dict(kind="half_plane", bc="neumann", lattice=((1, 0),))):
        with pytest.raises(ConfigurationError):
            QuotientSpec(**bad)


def test_reflection_symmetry_check():
    rep = check_reflection_symmetry(SYM)
    assert rep.ok() and rep.max_deviation < 1e-12
    bad = check_reflection_symmetry(ASYM)
    assert not bad.ok() and bad.A > 0.1


def test_dirichlet_vanishes_on_boundary():
    ev = ParametrixEvaluator(SYM, N=1)
    y = np.array([0.1, 0.4])
    for t in (0.02, 0.05):
        for x1 in (-0.3, 0.2, 0.7):
            assert half_plane_kernel(ev, "dirichlet", t, [x1, 0.0], y) == 0


def test_neumann_normal_derivative_vanishes():
    ev = ParametrixEvaluator(SYM, N=1)
    y = np.array([0.1, 0.4])
    for x1 in (-0.3, 0.2):
        j = half_plane_jet(ev, "neumann", 0.05, [x1, 0.0], y, order=1)
        assert abs(j[(0, 1)]) < 1e-10 * max(1.0, abs(j.value))
    jd = half_plane_jet(ev, "dirichlet", 0.05, [0.2, 0.0], y, order=1)
    assert abs(jd.value) < 1e-14 and abs(jd[(0, 1)]) > 1e-3


def test_free_half_plane_closed_form():
    x, y, t = np.array([0.3, 0.2]), np.array([-0.1, 0.5]), 0.1
    d = half_plane_kernel(free_kernel, "dirichlet", t, x, y)
    n = half_plane_kernel(free_kernel, "neumann", t, x, y)
    r2, r2i = np.sum((x - y) ** 2), (x[0] - y[0]) ** 2 + (x[1] + y[1]) ** 2
    g = 1 / (4 * math.pi * t)
    assert d == pytest.approx(g * (math.exp(-r2 / (4 * t)) - math.exp(-r2i / (4 * t))), rel=1e-13)
    assert n == pytest.approx(g * (math.exp(-r2 / (4 * t)) + math.exp(-r2i / (4 * t))), rel=1e-13)


def test_half_plane_refuses_asymmetric_fields():
    with pytest.raises(DomainError, match="not reflection symmetric"):
        half_plane_kernel(ParametrixEvaluator(ASYM), "dirichlet", 0.1, [0.1, 0.2], [0.0, 0.3])
    with pytest.raises(DomainError):
        half_plane_kernel(free_kernel, "neumann", 0.1, [0.1, 0.2], [0.0, 0.3], cfg=ASYM)
    with pytest.raises(DomainError, match="x2 >= 0"):
        half_plane_kernel(free_kernel, "neumann", 0.1, [0.1, -0.2], [0.0, 0.3])
    with pytest.raises(ConfigurationError):
        half_plane_kernel(free_kernel, "robin", 0.1, [0.1, 0.2], [0.0, 0.3])


def test_half_plane_cn_matches_images():
    g = GridSpec(L=4.0, n=128, dt=5e-4)
    y = np.array([0.0, 0.25])
    K = half_plane_cn(g, free_field(2), "dirichlet", y, 0.05).ravel()
    P = g.points()
    sel = (P[:, 1] >= 0) & (np.sum((P - y) ** 2, axis=-1) < 0.2)
    want = half_plane_kernel(free_kernel, "dirichlet", 0.05, P[sel], y)
    assert np.max(np.abs(K[sel] - want)) / np.max(np.abs(want)) < 0.02


def test_cylinder_free_sum():
    t = 0.05
    s = image_sum_kernel(free_kernel, QuotientSpec("cylinder"), t, [0.0, 0.0], [0.0, 0.0])
    theta = sum(math.exp(-n * n / (4 * t)) for n in range(-20, 21))
    assert s.value.real * 4 * math.pi * t == pytest.approx(theta, rel=1e-14)
    assert s.value.real * 4 * math.pi * t == pytest.approx(1 + 2 * math.exp(-5), rel=1e-8)
    assert s.tail_bound < 1e-12 and s.n_images >= 3


def test_gaussian_tail_monotone():
    G = np.eye(2)
    b = [gaussian_tail(G, R, 0.1) for R in (0.5, 1.5, 2.5, 3.5)]
    assert all(a > c for a, c in zip(b, b[1:]))
    assert b[0] == pytest.approx(4 * math.exp(-2.5) + 4 * math.exp(-5) + 4 * math.exp(-10), rel=1e-3)


def test_hard_cap_raises():
    spec = QuotientSpec("cylinder", tol=1e-12, hard_cap=2.0)
    with pytest.raises(NumericalError, match="hard cap"):
        image_sum_kernel(free_kernel, spec, 1.0, [0, 0], [0, 0])
    with pytest.raises(ConfigurationError):
        image_sum_kernel(free_kernel, QuotientSpec("cylinder", max_image_norm=10, hard_cap=5), 0.1, [0, 0], [0, 0])
    s = image_sum_kernel(free_kernel, QuotientSpec("cylinder", max_image_norm=1.0), 0.5, [0, 0], [0, 0])
    assert s.n_images == 3 and s.tail_bound > 1e-3


def test_cylinder_periodicity():
    spec = QuotientSpec("cylinder")
    assert check_periodicity(CYL, spec).ok()
    ev = ParametrixEvaluator(CYL, N=1)
    x, y = np.array([0.1, 0.2]), np.array([0.3, 0.1])
    a = image_sum_kernel(ev, spec, 0.05, x, y).value
    b = image_sum_kernel(ev, spec, 0.05, x, y + [0.0, 1.0]).value
    assert abs(a - b) < 1e-12 * abs(a)
    with pytest.raises(DomainError, match="cylinder"):
        image_sum_kernel(ParametrixEvaluator(SYM), spec, 0.05, x, y)


def test_torus_periodicity_zero_flux():
    cfg = torus_config(0, **TORUS)
    spec = QuotientSpec("torus")
    rep = check_periodicity(cfg, spec)
    assert rep.ok() and rep.flux == pytest.approx(0, abs=1e-12)
    ev = ParametrixEvaluator(cfg, N=1)
    x, y = np.array([0.1, 0.2]), np.array([0.3, 0.4])
    a = image_sum_kernel(ev, spec, 0.05, x, y).value
    for shift in ([1.0, 0.0], [0.0, -1.0], [2.0, 1.0]):
        assert abs(image_sum_kernel(ev, spec, 0.05, x, y + shift).value - a) < 1e-12 * abs(a)


def test_torus_flux_quantization():
    spec = QuotientSpec("torus")
    bad = check_periodicity(torus_config(B0=math.pi), spec)
    assert bad.flux == pytest.approx(math.pi, abs=1e-10) and not bad.ok()
    good = check_periodicity(torus_config(1), spec)
    assert good.flux == pytest.approx(2 * math.pi, abs=1e-10) and good.ok()
    with pytest.raises(DomainError, match="torus"):
        image_sum_kernel(ParametrixEvaluator(torus_config(B0=math.pi)), spec, 0.05, [0, 0], [0.2, 0])
    with pytest.raises(ConfigurationError):
        torus_config(1, B0=1.0)
    with pytest.raises(ConfigurationError):
        torus_config(1.5)


@pytest.mark.parametrize("kind", ["cylinder", "torus"])
def test_diagonal_expansion_lattice(kind):
    cfg = CYL if kind == "cylinder" else torus_config(0, **TORUS)
    ev = ParametrixEvaluator(cfg, N=1)
    spec = QuotientSpec(kind)
    x = np.array([0.1, 0.2])
    for t in (0.02, 0.1):
        exp = quotient_diagonal_expansion(ev, spec, t, x, K_max=2)
        for k in range(3):
            assert abs(exp.invariants[k] - ev.heat_invariant(k, x)) < 1e-12
            assert abs(exp.corrections[k]) <= exp.correction_bound[k] + 1e-300
        assert exp.tail_bound < spec.tol
        assert ((2, ()) in exp.terms) and len(exp.terms) > 3
    # image corrections decay like exp(-|g|^2 / 4t) as t shrinks
    a = quotient_diagonal_expansion(ev, spec, 0.02, x, K_max=2)
    b = quotient_diagonal_expansion(ev, spec, 0.04, x, K_max=2)
    ratio = math.exp(-1 / 0.08 + 1 / 0.16)
    for k in range(3):
        assert abs(a.corrections[k]) < 1.5 * ratio * abs(b.corrections[k])


def test_diagonal_expansion_half_plane():
    ev = ParametrixEvaluator(SYM, N=1)
    spec = QuotientSpec("half_plane", bc="dirichlet")
    exp = quotient_diagonal_expansion(ev, spec, 0.02, [0.3, 1.0])
    for k in range(len(exp.invariants)):
        assert abs(exp.invariants[k] - ev.heat_invariant(k, np.array([0.3, 1.0]))) < 1e-12
        assert abs(exp.corrections[k]) < math.exp(-25)
    with pytest.raises(DomainError):
        quotient_diagonal_expansion(ParametrixEvaluator(ASYM), spec, 0.02, [0.3, 1.0])
    with pytest.raises(DomainError):
        quotient_diagonal_expansion(ev, spec, 0.0, [0.3, 1.0])


@pytest.mark.parametrize("kind", ["half_plane", "cylinder", "torus"])
def test_image_corrections_exponentially_small(kind):
    cfg = {"half_plane": SYM, "cylinder": CYL, "torus": torus_config(0, **TORUS)}[kind]
    spec = QuotientSpec(kind, bc="neumann" if kind == "half_plane" else None)
    ev = ParametrixEvaluator(cfg, N=1)
    delta = 0.5
    x = np.array([0.3, delta]) if kind == "half_plane" else np.array([0.5, 0.5])
    for t in (0.01, 0.02, 0.05):
        exp = quotient_diagonal_expansion(ev, spec, t, x, K_max=2)
        # total image correction to 4 pi t K(t, x, x)
        total = sum(c * t ** k for k, c in enumerate(exp.corrections))
        assert abs(total) < math.exp(-delta ** 2 / (2 * t))


def test_dirichlet_antisymmetry_and_boundary_source():
    x, t = np.array([0.3, 0.2]), 0.1
    y = np.array([-0.1, 0.5])
    assert np.array_equal(reflect(reflect(y)), y)
    # a source on the boundary is its own image: the Dirichlet kernel vanishes
    assert half_plane_kernel(free_kernel, "dirichlet", t, x, [0.4, 0.0]) == 0
    ev = ParametrixEvaluator(SYM, N=1)
    assert half_plane_kernel(ev, "dirichlet", t, x, [0.4, 0.0]) == 0


def test_half_plane_does_not_feel_boundary():
    ev = ParametrixEvaluator(SYM, N=1)
    x = np.array([0.1, 0.8])
    for bc in ("dirichlet", "neumann"):
        vals = [abs(half_plane_kernel(ev, bc, t, x, x) * 4 * math.pi * t - 1) for t in (1e-2, 1e-3, 1e-4)]
        assert vals[-1] < 1e-3 and vals[0] > vals[1] > vals[2]


def test_simultaneous_lattice_shift():
    cfg = torus_config(0, **TORUS)
    ev = ParametrixEvaluator(cfg, N=1)
    spec = QuotientSpec("torus")
    x, y = np.array([0.1, 0.2]), np.array([0.3, 0.4])
    a = image_sum_kernel(ev, spec, 0.05, x, y)
    b = image_sum_kernel(ev, spec, 0.05, x + [1.0, -1.0], y + [1.0, -1.0])
    assert abs(a.value - b.value) < 1e-10 * abs(a.value)
    ev = ParametrixEvaluator(CYL, N=1)
    a = image_sum_kernel(ev, QuotientSpec("cylinder"), 0.05, x, y)
    b = image_sum_kernel(ev, QuotientSpec("cylinder"), 0.05, x + [0.0, 2.0], y + [0.0, 2.0])
    assert abs(a.value - b.value) < 1e-10 * abs(a.value)
