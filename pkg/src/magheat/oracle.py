"""Independent ground truths.

* :func:`mehler_kernel` -- exact heat kernel for a constant magnetic field in
  d = 2 (symmetric gauge ``A = (B/2)(-x2, x1)``).
* :func:`oscillator_kernel` -- exact kernel of ``-Laplace + |x|^2``.
* :func:`crank_nicolson_evolve` -- a gauge-covariant finite-difference solver
  (Peierls link phases) for arbitrary smooth fields in d = 2.
* :func:`fit_power_law` -- log-log least squares for order-of-accuracy checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .exceptions import ConfigurationError, DomainError, NumericalError
from .fields import FieldConfig

__all__ = [
    "MehlerParams",
    "mehler_kernel",
    "oscillator_kernel",
    "GridSpec",
    "CNResult",
    "magnetic_laplacian",
    "crank_nicolson_evolve",
    "PowerLawFit",
    "fit_power_law",
]


@dataclass(frozen=True)
class MehlerParams:
    B: float


def mehler_kernel(p: MehlerParams | float, t, x, y):
    """Heat kernel of ``(-i grad - A)^2`` with ``A = (B/2)(-x2, x1)``.

    ``K = B / (4 pi sinh(Bt)) exp(-(B/4) coth(Bt) |x-y|^2 - i (B/2)(x1 y2 - x2 y1))``
    """
    B = p.B if isinstance(p, MehlerParams) else float(p)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("Mehler kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    bt = B * t
    small = np.abs(bt) < 1e-6
    safe = np.where(small, 1.0, bt)
    # bt / sinh(bt) and bt coth(bt), series-expanded near zero
    ratio = np.where(small, 1 - bt ** 2 / 6, safe / np.sinh(safe))
    bcoth = np.where(small, 1 + bt ** 2 / 3, safe / np.tanh(safe))
    r2 = np.sum((x - y) ** 2, axis=-1)
    cross = x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0]
    return ratio / (4 * np.pi * t) * np.exp(-bcoth * r2 / (4 * t) - 0.5j * B * cross)


def oscillator_kernel(t, x, y):
    """Heat kernel of ``-Laplace + |x|^2`` on R^d (product of 1-d Mehler formulas)."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("oscillator kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x.shape[-1]
    s, c = np.sinh(2 * t), np.cosh(2 * t)
    expo = -(np.sum(x ** 2 + y ** 2, axis=-1) * c - 2 * np.sum(x * y, axis=-1)) / (2 * s)
    return (2 * np.pi * s) ** (-d / 2) * np.exp(expo)


# -- Crank-Nicolson ---------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``[-L, L)^2`` with ``n`` points per axis.

    ``boundary`` is ``"periodic"`` or ``"dirichlet"`` (zero outside the box).
    If ``t_max`` is given, the box is checked to be wide enough that the
    Gaussian tail ``exp(-L^2 / 4 t_max)`` is below 1e-12.
    """

    L: float
    n: int
    dt: float = 1e-3
    boundary: str = "periodic"
    t_max: float | None = None
    d: int = 2

    def __post_init__(self):
        if self.d != 2:
            raise ConfigurationError("grid solvers are implemented for d = 2 only")
        if self.n < 16:
            raise ConfigurationError("grid needs n >= 16 points per axis")
        if self.L <= 0 or self.dt <= 0:
            raise ConfigurationError("L and dt must be positive")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")
        if self.t_max is not None and np.exp(-self.L ** 2 / (4 * self.t_max)) >= 1e-12:
            raise ConfigurationError(
                f"box half-width L={self.L} too small for t_max={self.t_max}: "
                f"need L > {np.sqrt(4 * self.t_max * np.log(1e12)):.3f}")

    @property
    def h(self):
        return 2 * self.L / self.n

    @property
    def axis(self):
        return -self.L + self.h * np.arange(self.n)

    @property
    def cell_area(self):
        return self.h ** 2

    def points(self):
        """Flattened grid points, shape ``(n*n, 2)``, ``x1`` varying slowest."""
        a = self.axis
        X1, X2 = np.meshgrid(a, a, indexing="ij")
        return np.stack([X1.ravel(), X2.ravel()], axis=-1)

    def index_of(self, point, tol=1e-9):
        """Flat index of a grid point; raises if ``point`` is off-grid."""
        point = np.asarray(point, dtype=float)
        k = np.rint((point + self.L) / self.h).astype(int)
        if np.any(np.abs(-self.L + k * self.h - point) > tol) or np.any((k < 0) | (k >= self.n)):
            raise ConfigurationError(f"point {point.tolist()} is not a grid node")
        return int(k[0] * self.n + k[1])

    def to_dict(self):
        return {"L": self.L, "n": self.n, "dt": self.dt, "boundary": self.boundary,
                "t_max": self.t_max}


@dataclass
class CNResult:
    grid: GridSpec
    y: np.ndarray
    T: float
    values: np.ndarray          # shape (n, n): K(T, x, y) on the grid
    iterations: list = field(default_factory=list)

    def at(self, point):
        return self.values.ravel()[self.grid.index_of(point)]


def magnetic_laplacian(g: GridSpec, cfg: FieldConfig) -> sp.csr_matrix:
    """Sparse ``H`` with Peierls link phases ``exp(-i int A . dl)`` (midpoint rule)."""
    if cfg.d != 2:
        raise ConfigurationError("grid Hamiltonian needs d = 2")
    n, h = g.n, g.h
    pts = g.points()
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []
    diag = 4.0 / h ** 2 + np.real_if_close(cfg.V(pts)).astype(complex)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag)
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        src = idx
        dst = np.roll(idx, -1, axis=axis)
        mid = pts + 0.5 * e
        theta = h * np.real_if_close(cfg.A[axis](mid))
        link = -np.exp(-1j * theta) / h ** 2          # H[i, i+e]
        s, dd, lk = src.ravel(), dst.ravel(), link.ravel()
        if g.boundary == "dirichlet":
            keep = (np.indices((n, n))[axis] < n - 1).ravel()
            s, dd, lk = s[keep], dd[keep], lk[keep]
        rows += [s, dd]
        cols += [dd, s]
        vals += [lk, np.conj(lk)]
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n))
    return H


def crank_nicolson_evolve(g: GridSpec, cfg: FieldConfig, y, T: float,
                          rtol: float = 1e-10, maxiter: int = 1000) -> CNResult:
    """Approximate ``K(T, ., y)`` by evolving a discrete delta at ``y``.

    The first step of size ``dt`` is explicit Euler (it smooths the delta);
    the remaining steps are Crank-Nicolson, solved by conjugate gradients.
    """
    if T <= 0:
        raise DomainError("evolution time must be positive")
    steps = T / g.dt
    nsteps = int(round(steps))
    if nsteps < 1 or abs(steps - nsteps) > 1e-9 * max(1.0, steps):
        raise ConfigurationError(f"T={T} is not an integer multiple of dt={g.dt}")
    if g.dt * 8 / g.h ** 2 > 2:
        raise ConfigurationError("explicit start step unstable: need dt <= h^2/4")
    H = magnetic_laplacian(g, cfg)
    I = sp.identity(H.shape[0], format="csr", dtype=complex)
    lhs = (I + 0.5 * g.dt * H).tocsr()
    rhs_op = (I - 0.5 * g.dt * H).tocsr()

    u = np.zeros(H.shape[0], dtype=complex)
    u[g.index_of(y)] = 1.0 / g.cell_area
    u = u - g.dt * (H @ u)
    iters = []
    for _ in range(nsteps - 1):
        b = rhs_op @ u
        count = [0]

        def cb(_xk):
            count[0] += 1

        u_new, info = spla.cg(lhs, b, x0=u, rtol=rtol, atol=0.0, maxiter=maxiter, callback=cb)
        if info != 0:
            raise NumericalError(f"CG did not converge (info={info}) after {count[0]} iterations")
        u = u_new
        iters.append(count[0])
    return CNResult(g, np.asarray(y, dtype=float), T, u.reshape(g.n, g.n), iters)


# -- power laws -------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawFit:
    """Least-squares fit ``log value = slope * log t + intercept``."""

    t: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float
    slope_stderr: float
    residual_rms: float

    @property
    def prefactor(self):
        return float(np.exp(self.intercept))

    def within(self, target, band):
        return abs(self.slope - target) <= band

    def to_dict(self):
        return {"slope": self.slope, "slope_stderr": self.slope_stderr,
                "intercept": self.intercept, "residual_rms": self.residual_rms,
                "t": self.t.tolist(), "values": self.values.tolist()}


def fit_power_law(t, values) -> PowerLawFit:
    """Fit ``values ~ C t^slope`` on a strictly monotone ladder of >= 4 times."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if t.shape != values.shape or t.ndim != 1:
        raise ConfigurationError("t and values must be 1-d arrays of equal length")
    if len(t) < 4:
        raise ConfigurationError("power-law fit needs at least 4 samples")
    dt = np.diff(t)
    if not (np.all(dt > 0) or np.all(dt < 0)):
        raise ConfigurationError("time ladder must be strictly monotone")
    if np.any(t <= 0) or np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise DomainError("power-law fit needs positive finite samples")
    lt, lv = np.log(t), np.log(values)
    res = stats.linregress(lt, lv)
    resid = lv - (res.slope * lt + res.intercept)
    return PowerLawFit(t, values, float(res.slope), float(res.intercept),
                       float(res.stderr), float(np.sqrt(np.mean(resid ** 2))))
