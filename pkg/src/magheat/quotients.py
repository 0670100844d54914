"""Kernels on half-plane, cylinder and torus by the method of images.

Half-plane ``x2 > 0``: with the reflection ``R(x1, x2) = (x1, -x2)`` and a
reflection-symmetric extension of the fields,

    K-(t, x, y) = K(t, x, y) - K(t, x, Ry)    (Dirichlet)
    K+(t, x, y) = K(t, x, y) + K(t, x, Ry)    (Neumann)

Cylinder / torus: lattice sums ``sum_n K(t, x, y + n)`` over the images of
``y``, truncated where the Gaussian tail drops below a tolerance; the tail
bound is returned with the value.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DomainError, NumericalError
from .fields import FieldConfig, magnetic_field, parse_expr, symmetric_gauge
from .jets import TaylorJet
from .oracle import GridSpec, crank_nicolson_evolve
from .parametrix import ParametrixEvaluator
from .quadrature import gauss_legendre, line_integral

__all__ = [
    "QuotientSpec",
    "SymmetryReport",
    "PeriodicityReport",
    "ImageSum",
    "DiagonalExpansion",
    "reflect",
    "check_reflection_symmetry",
    "check_periodicity",
    "half_plane_kernel",
    "half_plane_jet",
    "half_plane_cn",
    "image_sum_kernel",
    "quotient_diagonal_expansion",
    "torus_config",
]

KINDS = ("half_plane", "cylinder", "torus")
SYMMETRY_TOL = 1e-10


def reflect(x):
    """``R(x1, x2) = (x1, -x2)`` on the last axis."""
    x = np.array(x, copy=True)
    if x.dtype.kind not in "fc":
        x = x.astype(float)
    x[..., 1] *= -1
    return x


@dataclass(frozen=True)
class QuotientSpec:
    """Which quotient of the plane, and how to truncate image sums.

    ``lattice`` rows are translation generators; defaults are ``e2`` for the
    cylinder and ``e1, e2`` for the torus.  Image sums stop at the radius
    where the Gaussian tail is below ``tol``, unless ``max_image_norm`` fixes
    the radius; ``hard_cap`` bounds the radius either way.
    """

    kind: str
    bc: str | None = None
    lattice: tuple | None = None
    tol: float = 1e-12
    max_image_norm: float | None = None
    hard_cap: float = 64.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown quotient kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "half_plane":
            if self.bc not in ("dirichlet", "neumann"):
                raise ConfigurationError("half_plane needs bc 'dirichlet' or 'neumann'")
        elif self.bc is not None:
            raise ConfigurationError(f"bc applies to half_plane only, got bc={self.bc!r}")
        if self.lattice is None:
            lat = {"cylinder": ((0.0, 1.0),), "torus": ((1.0, 0.0), (0.0, 1.0))}.get(self.kind)
            object.__setattr__(self, "lattice", lat)
        elif self.kind == "half_plane":
            raise ConfigurationError("half_plane takes no lattice")
        if self.lattice is not None:
            G = np.asarray(self.lattice, dtype=float)
            want = 1 if self.kind == "cylinder" else 2
            if G.shape != (want, 2) or abs(np.linalg.det(G @ G.T)) < 1e-12:
                raise ConfigurationError(f"{self.kind} needs {want} independent generators in R^2")
            object.__setattr__(self, "lattice", tuple(map(tuple, G.tolist())))
        if not (0 < self.tol < 1):
            raise ConfigurationError("tol must lie in (0, 1)")

    @property
    def generators(self) -> np.ndarray:
        return np.asarray(self.lattice, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "bc": self.bc, "lattice": self.lattice, "tol": self.tol,
                "max_image_norm": self.max_image_norm, "hard_cap": self.hard_cap}


# -- field checks -----------------------------------------------------------


@dataclass(frozen=True)
class SymmetryReport:
    """Max deviations of the reflection identities (all >= 0)."""

    V: float
    A: float
    B: float
    boundary: float
    details: dict = field(default_factory=dict, compare=False)

    @property
    def max_deviation(self):
        return max(self.V, self.A, self.B, self.boundary)

    def ok(self, tol=SYMMETRY_TOL):
        return self.max_deviation <= tol

    def to_dict(self):
        return {"V": self.V, "A": self.A, "B": self.B, "boundary": self.boundary,
                "details": self.details}


def _rng_points(rng, n, box):
    return rng.uniform(-box, box, size=(n, 2))


def check_reflection_symmetry(cfg: FieldConfig, samples: int = 64, seed: int = 0,
                              box: float = 2.0) -> SymmetryReport:
    """Sampled check of ``V(Rx) = V(x)``, ``A(Rx) = R A(x)``, ``B(Rx) = -B(x)``.

    At boundary points ``(x1, 0)`` it also checks, through jets of order 3,
    that the odd ``x2``-derivatives of ``V`` and ``A1`` and the even ones
    (orders 0 and 2) of ``A2`` vanish.
    """
    if cfg.d != 2:
        raise ConfigurationError("reflection symmetry is defined for d = 2")
    rng = np.random.default_rng(seed)
    pts = _rng_points(rng, samples, box)
    rpts = reflect(pts)
    dV = float(np.max(np.abs(cfg.V(rpts) - cfg.V(pts))))
    A = np.stack([a(pts) for a in cfg.A], axis=-1)
    Ar = np.stack([a(rpts) for a in cfg.A], axis=-1)
    dA = float(np.max(np.abs(Ar - reflect(A))))
    B = np.array([magnetic_field(cfg, p) for p in pts[: min(samples, 16)]])
    Br = np.array([magnetic_field(cfg, p) for p in rpts[: min(samples, 16)]])
    dB = float(np.max(np.abs(Br + B)))

    order = min(3, cfg.jet_cap)
    bpts = np.stack([rng.uniform(-box, box, samples), np.zeros(samples)], axis=-1)
    Vj = cfg.potential_jet(bpts, order)
    Aj = cfg.vector_potential_jets(bpts, order)
    details = {}
    for name, jet, parity in (("V", Vj, 1), ("A1", Aj[0], 1), ("A2", Aj[1], 0)):
        for k in range(order + 1):
            if k % 2 == parity:
                details[f"d{k}/dx2^{k} {name}"] = float(np.max(np.abs(jet[(0, k)])))
    return SymmetryReport(dV, dA, dB, max(details.values()), details)


@dataclass(frozen=True)
class PeriodicityReport:
    """Sampled periodicity of the fields under the lattice generators.

    For the torus ``A`` only needs to be periodic up to a constant shift (a
    linear gauge term), and ``flux`` is the circulation of ``A`` around the
    unit cell, which must lie in ``2 pi Z``.
    """

    V: float
    B: float
    A: float
    flux: float | None = None
    flux_defect: float = 0.0

    @property
    def max_deviation(self):
        return max(self.V, self.B, self.A, self.flux_defect)

    def ok(self, tol=SYMMETRY_TOL):
        return self.max_deviation <= tol

    def to_dict(self):
        return {"V": self.V, "B": self.B, "A": self.A, "flux": self.flux,
                "flux_defect": self.flux_defect}


def _circulation(cfg, corner, g1, g2, rule):
    # counter-clockwise around the parallelogram spanned by g1, g2
    total = 0.0
    verts = [corner, corner + g1, corner + g1 + g2, corner + g2, corner]
    for a, b in zip(verts[:-1], verts[1:]):
        v = b - a

        def f(s, a=a, v=v):
            p = a[None] + s[:, None] * v[None]
            return sum(cfg.A[j](p) * v[j] for j in range(2))

        total += line_integral(f, rule)
    return float(np.real(total))


def check_periodicity(cfg: FieldConfig, spec: QuotientSpec, samples: int = 64, seed: int = 0,
                      box: float = 2.0) -> PeriodicityReport:
    if spec.kind == "half_plane":
        raise ConfigurationError("periodicity applies to cylinder and torus")
    if cfg.d != 2:
        raise ConfigurationError("quotients are implemented for d = 2")
    rng = np.random.default_rng(seed)
    pts = _rng_points(rng, samples, box)
    Bpts = pts[: min(samples, 16)]
    dV = dB = dA = 0.0
    A0 = np.stack([a(pts) for a in cfg.A], axis=-1)
    B0 = np.array([magnetic_field(cfg, p) for p in Bpts])
    for g in spec.generators:
        dV = max(dV, float(np.max(np.abs(cfg.V(pts + g) - cfg.V(pts)))))
        Bg = np.array([magnetic_field(cfg, p) for p in Bpts + g])
        dB = max(dB, float(np.max(np.abs(Bg - B0))))
        shift = np.stack([a(pts + g) for a in cfg.A], axis=-1) - A0
        if spec.kind == "torus":
            shift = shift - shift[:1]
        dA = max(dA, float(np.max(np.abs(shift))))
    flux, defect = None, 0.0
    if spec.kind == "torus":
        g1, g2 = spec.generators
        if g1[0] * g2[1] - g1[1] * g2[0] < 0:
            g1, g2 = g2, g1
        flux = _circulation(cfg, pts[0], g1, g2, gauss_legendre(32))
        q = flux / (2 * np.pi)
        defect = float(abs(q - np.rint(q)) * 2 * np.pi)
    return PeriodicityReport(dV, dB, dA, flux, defect)


def torus_config(n_flux: int | None = None, *, B0: float | None = None, V="0",
                 A_per=("0", "0"), jet_cap: int = 8, label="") -> FieldConfig:
    """Torus fields: periodic ``V``, ``A_per`` plus the linear gauge ``A0`` for ``B0``.

    ``n_flux`` sets the quantized flux ``B0 = 2 pi n_flux``.  Passing ``B0``
    directly allows non-quantized values, which :func:`check_periodicity`
    then flags.
    """
    if (n_flux is None) == (B0 is None):
        raise ConfigurationError("give exactly one of n_flux or B0")
    if n_flux is not None:
        if int(n_flux) != n_flux:
            raise ConfigurationError("n_flux must be an integer")
        B0 = 2 * np.pi * int(n_flux)
    A0 = symmetric_gauge(float(B0))
    Ap = [parse_expr(a, 2) if isinstance(a, str) else a for a in A_per]
    A = tuple(A0[j] + Ap[j] for j in range(2))
    return FieldConfig(d=2, V=V, A=A, jet_cap=jet_cap, label=label or f"torus B0={B0:g}")


# -- half-plane -------------------------------------------------------------


def _kernel_callable(f):
    if isinstance(f, ParametrixEvaluator):
        return f.parametrix_eval, f.cfg
    if callable(f):
        return f, None
    raise ConfigurationError("kernel must be a ParametrixEvaluator or a callable (t, x, y)")


def _require_symmetric(cfg, tol):
    if cfg is None:
        return
    rep = check_reflection_symmetry(cfg)
    if not rep.ok(tol):
        raise DomainError(
            f"fields are not reflection symmetric (max deviation {rep.max_deviation:.3e} > {tol:g}): "
            f"V {rep.V:.2e}, A {rep.A:.2e}, B {rep.B:.2e}, boundary {rep.boundary:.2e}")


def _sign(bc):
    if bc == "dirichlet":
        return -1.0
    if bc == "neumann":
        return 1.0
    raise ConfigurationError(f"unknown boundary condition {bc!r}")


def _upper(*pts):
    for p in pts:
        if np.any(np.asarray(p, dtype=float)[..., 1] < 0):
            raise DomainError("half-plane points need x2 >= 0")


def half_plane_kernel(f, bc: str, t, x, y, cfg: FieldConfig | None = None,
                      tol: float = SYMMETRY_TOL):
    """``K(t, x, y) -/+ K(t, x, Ry)`` for Dirichlet / Neumann conditions.

    ``f`` is a :class:`ParametrixEvaluator` or any callable ``(t, x, y)``
    (e.g. an exact kernel); the fields (``f.cfg`` or ``cfg``) are checked for
    reflection symmetry first.
    """
    fn, own = _kernel_callable(f)
    _require_symmetric(cfg if cfg is not None else own, tol)
    sgn = _sign(bc)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _upper(x, y)
    return fn(t, x, y) + sgn * fn(t, x, reflect(y))


def half_plane_jet(ev: ParametrixEvaluator, bc: str, t, x, y, order: int = 1,
                   tol: float = SYMMETRY_TOL) -> TaylorJet:
    """Jet in ``x`` of the half-plane parametrix (for normal derivatives)."""
    _require_symmetric(ev.cfg, tol)
    sgn = _sign(bc)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _upper(x, y)
    return ev.parametrix_jet(t, x, y, order) + ev.parametrix_jet(t, x, reflect(y), order) * sgn


def half_plane_cn(g: GridSpec, cfg: FieldConfig, bc: str, y, T: float,
                  tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Half-plane kernel ``K-/+(T, ., y)`` on the grid from two CN runs."""
    _require_symmetric(cfg, tol)
    sgn = _sign(bc)
    y = np.asarray(y, dtype=float)
    _upper(y)
    a = crank_nicolson_evolve(g, cfg, y, T).values
    b = crank_nicolson_evolve(g, cfg, reflect(y), T).values
    return a + sgn * b


# -- lattice sums -----------------------------------------------------------


@dataclass(frozen=True)
class ImageSum:
    value: complex
    tail_bound: float
    n_images: int
    radius: float

    def to_dict(self):
        return {"re": float(np.real(self.value)), "im": float(np.imag(self.value)),
                "tail_bound": self.tail_bound, "n_images": self.n_images, "radius": self.radius}


def _lattice_points(G, radius):
    # integer vectors n with |n G| <= radius
    k = G.shape[0]
    smin = np.sqrt(np.min(np.linalg.eigvalsh(G @ G.T)))
    m = int(np.ceil(radius / smin))
    rng = np.arange(-m, m + 1)
    n = np.array(list(itertools.product(rng, repeat=k)), dtype=float).reshape(-1, k)
    norms = np.linalg.norm(n @ G, axis=-1)
    keep = norms <= radius + 1e-12
    order = np.lexsort((*n[keep].T[::-1], norms[keep]))
    return n[keep][order], norms[keep][order]


def gaussian_tail(G, radius, t, diam=0.0):
    """``sum_{|n G| > radius} exp(-(|n G| - diam)^2 / 4t)`` (terms with ``|n G| <= diam`` count as 1)."""
    G = np.asarray(G, dtype=float)
    # summing out to where terms underflow below 1e-300
    far = diam + np.sqrt(4 * t * 700.0) + 2 * np.max(np.linalg.norm(G, axis=-1))
    n, norms = _lattice_points(G, max(far, radius))
    out = norms > radius + 1e-12
    gap = np.maximum(norms[out] - diam, 0.0)
    return float(np.sum(np.exp(-gap ** 2 / (4 * t))))


def _truncation_radius(spec, t, diam):
    G = spec.generators
    if spec.max_image_norm is not None:
        R = float(spec.max_image_norm)
        if R > spec.hard_cap:
            raise ConfigurationError("max_image_norm exceeds hard_cap")
        return R, gaussian_tail(G, R, t, diam)
    step = np.min(np.linalg.norm(G, axis=-1))
    R = diam
    while True:
        bound = gaussian_tail(G, R, t, diam)
        if bound < spec.tol:
            return R, bound
        if R >= spec.hard_cap:
            raise NumericalError(
                f"image-sum tolerance {spec.tol:g} not reached within hard cap {spec.hard_cap:g}; "
                f"achieved tail bound {bound:.3e}")
        R = min(R + step, spec.hard_cap)


def image_sum_kernel(f, spec: QuotientSpec, t: float, x, y, check: bool = True,
                     tol: float = SYMMETRY_TOL) -> ImageSum:
    """Truncated lattice sum ``sum_n K(t, x, y + n G)``.

    ``f`` is a :class:`ParametrixEvaluator` or a callable ``(t, x, Y)``
    vectorized over rows of ``Y``.  For an evaluator the fields are checked
    for lattice periodicity (and, on the torus, flux quantization) unless
    ``check=False``.  The tail bound is the bare Gaussian sum over the
    omitted images, with ``diam = |x - y|``.
    """
    if spec.kind == "half_plane":
        val = half_plane_kernel(f, spec.bc, t, x, y)
        return ImageSum(complex(val), 0.0, 2, 0.0)
    if t <= 0:
        raise DomainError("image sums need t > 0")
    fn, cfg = _kernel_callable(f)
    if check and cfg is not None:
        rep = check_periodicity(cfg, spec)
        if not rep.ok(tol):
            raise DomainError(f"fields are not compatible with the {spec.kind} lattice: {rep.to_dict()}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diam = float(np.linalg.norm(x - y))
    R, bound = _truncation_radius(spec, t, diam)
    n, _ = _lattice_points(spec.generators, R)
    Y = y[None] + n @ spec.generators
    X = np.broadcast_to(x, Y.shape)
    vals = np.asarray(fn(t, X, Y))
    return ImageSum(complex(np.sum(vals)), bound, len(Y), R)


# -- diagonal expansions ----------------------------------------------------


@dataclass
class DiagonalExpansion:
    """Diagonal of a quotient parametrix, split by coefficient and image.

    ``terms[(k, n)]`` is ``weight_n * u_k(x, image_n)`` (sign included for the
    half-plane), with ``n = ()`` for the identity image.  ``invariants[k]``
    is the identity part ``u_k(x, x)``; ``corrections[k]`` sums the rest.
    ``correction_bound[k]`` bounds ``|corrections[k]|`` by the absolute sum of
    the kept image terms plus the Gaussian tail times the largest kept
    ``|u_k|`` (a measured, not certified, amplitude).
    """

    t: float
    x: np.ndarray
    terms: dict
    invariants: list
    corrections: list
    correction_bound: list
    tail_bound: float

    def diagonal(self):
        """``(4 pi t)^-1 sum_k (a_k + corrections_k) t^k``."""
        t = self.t
        return sum((a + c) * t ** k for k, (a, c) in
                   enumerate(zip(self.invariants, self.corrections))) / (4 * np.pi * t)


def quotient_diagonal_expansion(ev: ParametrixEvaluator, spec: QuotientSpec, t: float, x,
                                K_max: int | None = None, check: bool = True,
                                tol: float = SYMMETRY_TOL) -> DiagonalExpansion:
    if ev.d != 2:
        raise ConfigurationError("quotients are implemented for d = 2")
    if t <= 0:
        raise DomainError("diagonal expansion needs t > 0")
    kmax = ev.N + 1 if K_max is None else int(K_max)
    x = np.asarray(x, dtype=float)
    if spec.kind == "half_plane":
        if check:
            _require_symmetric(ev.cfg, tol)
        _upper(x)
        labels = [(), ("R",)]
        images = np.stack([x, reflect(x)])
        weights = np.array([1.0, _sign(spec.bc) * np.exp(-x[1] ** 2 / t)])
        tail = 0.0
    else:
        if check:
            rep = check_periodicity(ev.cfg, spec)
            if not rep.ok(tol):
                raise DomainError(f"fields are not compatible with the {spec.kind} lattice: {rep.to_dict()}")
        R, tail = _truncation_radius(spec, t, 0.0)
        n, norms = _lattice_points(spec.generators, R)
        labels = [tuple(int(v) for v in row) if np.any(row) else () for row in n]
        images = x[None] + n @ spec.generators
        weights = np.exp(-norms ** 2 / (4 * t))
    X = np.broadcast_to(x, images.shape)
    u = ev.coefficients(X, images, kmax)
    terms = {}
    inv, corr, bounds = [], [], []
    for k in range(kmax + 1):
        uk = np.asarray(u[k]).reshape(len(images))
        vals = weights * uk
        for lab, v in zip(labels, vals):
            terms[(k, lab)] = complex(v)
        ident = [i for i, lab in enumerate(labels) if lab == ()]
        rest = [i for i, lab in enumerate(labels) if lab != ()]
        inv.append(complex(vals[ident[0]]))
        corr.append(complex(np.sum(vals[rest])) if rest else 0j)
        amp = float(np.max(np.abs(uk)))
        bounds.append(float(np.sum(np.abs(vals[rest]))) + tail * amp)
    return DiagonalExpansion(t, x, terms, inv, corr, bounds, tail)
