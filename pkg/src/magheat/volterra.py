"""Space-time convolution of sampled kernels and Volterra partial sums.

Kernels live on a shared 2-d grid (:class:`~magheat.oracle.GridSpec`) and a
uniform time ladder ``t_j = j * dt``, ``j = 1..m``.  The uniform ladder makes
``t - s`` land on the ladder for every inner node ``s``, so the Duhamel
convolution

    (f * g)(t, x, y) = int_0^t int f(t - s, x, z) g(s, z, y) dz ds

becomes a sum of weighted matrix products.  The inner time integral is a
trapezoid rule whose two endpoint values (``s = 0`` and ``s = t``) are
extrapolated linearly from the adjacent nodes; the difference to constant
extrapolation is kept as an endpoint-error estimate.

A :class:`GridKernel` may store only a subset of rows (``x_idx``) and
columns (``y_idx``) of the full ``n^2 x n^2`` matrix; a convolution needs
all columns of the left factor and all rows of the right factor.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .oracle import GridSpec, PowerLawFit, fit_power_law
from .parametrix import ParametrixEvaluator

__all__ = [
    "GridKernel",
    "uniform_ladder",
    "sample_kernel",
    "convolve",
    "degree_estimate",
    "volterra_partial_sum",
    "VolterraResult",
    "partial_sum_residual",
]

MAX_ELEMENTS = 60_000_000


def uniform_ladder(t_max: float, m: int) -> np.ndarray:
    """``t_j = j * t_max / m`` for ``j = 1..m``."""
    if m < 2 or t_max <= 0:
        raise ConfigurationError("ladder needs m >= 2 and t_max > 0")
    return t_max * np.arange(1, m + 1) / m


@dataclass
class GridKernel:
    """Kernel samples ``values[j, a, b] = f(times[j], x_a, y_b)``.

    ``x_idx`` / ``y_idx`` are flat grid indices of the stored rows / columns.
    ``endpoint_error`` (same shape as ``values``) is filled by :func:`convolve`.
    """

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray
    x_idx: np.ndarray
    y_idx: np.ndarray
    endpoint_error: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        self.x_idx = np.asarray(self.x_idx, dtype=np.int64)
        self.y_idx = np.asarray(self.y_idx, dtype=np.int64)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("times must be strictly increasing")
        if self.values.shape != (len(self.times), len(self.x_idx), len(self.y_idx)):
            raise ConfigurationError(
                f"values shape {self.values.shape} does not match "
                f"({len(self.times)}, {len(self.x_idx)}, {len(self.y_idx)})")

    @property
    def full_rows(self):
        return len(self.x_idx) == self.grid.n ** 2 and np.array_equal(
            self.x_idx, np.arange(self.grid.n ** 2))

    @property
    def full_cols(self):
        return len(self.y_idx) == self.grid.n ** 2 and np.array_equal(
            self.y_idx, np.arange(self.grid.n ** 2))

    def _flat(self, point):
        # a grid point, or an integer flat index
        if isinstance(point, (int, np.integer)):
            return int(point)
        return self.grid.index_of(point)

    def row(self, point):
        """Position of ``point`` (grid point or flat index) among the stored rows."""
        i = self._flat(point)
        hits = np.nonzero(self.x_idx == i)[0]
        if not len(hits):
            raise ConfigurationError(f"row {np.asarray(point).tolist()} not stored")
        return int(hits[0])

    def col(self, point):
        i = self._flat(point)
        hits = np.nonzero(self.y_idx == i)[0]
        if not len(hits):
            raise ConfigurationError(f"column {np.asarray(point).tolist()} not stored")
        return int(hits[0])

    def at(self, j, x, y):
        return self.values[j, self.row(x), self.col(y)]

    def series(self, x, y):
        """Samples over the ladder at one stored (x, y)."""
        return self.values[:, self.row(x), self.col(y)]

    def sup_norm(self, j=None):
        v = self.values if j is None else self.values[j]
        return float(np.max(np.abs(v)))

    def __add__(self, other):
        _check_compatible(self, other)
        return GridKernel(self.grid, self.times, self.values + other.values, self.x_idx, self.y_idx)

    def __sub__(self, other):
        _check_compatible(self, other)
        return GridKernel(self.grid, self.times, self.values - other.values, self.x_idx, self.y_idx)

    def scale(self, c):
        return GridKernel(self.grid, self.times, c * self.values, self.x_idx, self.y_idx)

    # -- serialization --------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Flat little-endian layout, see ``docs/formats.md``."""
        g = self.grid
        buf = io.BytesIO()
        m = len(self.times)
        buf.write(struct.pack("<qqdq", g.d, g.n, g.L, m))
        buf.write(self.times.astype("<f8").tobytes())
        buf.write(struct.pack("<qq", len(self.x_idx), len(self.y_idx)))
        buf.write(self.x_idx.astype("<i8").tobytes())
        buf.write(self.y_idx.astype("<i8").tobytes())
        pairs = np.empty(self.values.shape + (2,), dtype="<f8")
        pairs[..., 0] = self.values.real
        pairs[..., 1] = self.values.imag
        buf.write(pairs.tobytes(order="C"))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, dt: float = 1e-3, boundary="periodic") -> "GridKernel":
        off = 0
        d, n, L, m = struct.unpack_from("<qqdq", data, off)
        off += 32
        times = np.frombuffer(data, "<f8", m, off).copy()
        off += 8 * m
        nx, ny = struct.unpack_from("<qq", data, off)
        off += 16
        x_idx = np.frombuffer(data, "<i8", nx, off).copy()
        off += 8 * nx
        y_idx = np.frombuffer(data, "<i8", ny, off).copy()
        off += 8 * ny
        pairs = np.frombuffer(data, "<f8", m * nx * ny * 2, off).reshape(m, nx, ny, 2)
        if off + pairs.nbytes != len(data):
            raise ConfigurationError("trailing bytes in grid kernel payload")
        values = pairs[..., 0] + 1j * pairs[..., 1]
        return cls(GridSpec(L=L, n=int(n), dt=dt, boundary=boundary, d=int(d)),
                   times, values, x_idx, y_idx)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, **kw):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), **kw)

    def to_csv(self, path_or_buf, max_rows=200_000):
        total = self.values.size
        if total > max_rows:
            raise ConfigurationError(f"{total} samples exceed the CSV limit of {max_rows}")
        pts = self.grid.points()
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            fh.write("t,x1,x2,y1,y2,re,im\n")
            for j, t in enumerate(self.times):
                for a, xi in enumerate(self.x_idx):
                    for b, yi in enumerate(self.y_idx):
                        v = self.values[j, a, b]
                        row = (t, *pts[xi], *pts[yi], v.real, v.imag)
                        fh.write(",".join(f"{q:.17g}" for q in row) + "\n")
        finally:
            if own:
                fh.close()


def _check_compatible(a: GridKernel, b: GridKernel):
    if a.grid.n != b.grid.n or a.grid.L != b.grid.L:
        raise ConfigurationError("kernels live on different grids")
    if not np.allclose(a.times, b.times, rtol=1e-12, atol=0):
        raise ConfigurationError("kernels use different time ladders")
    if not (np.array_equal(a.x_idx, b.x_idx) and np.array_equal(a.y_idx, b.y_idx)):
        raise ConfigurationError("kernels store different rows/columns")


def _resolve_idx(grid, idx):
    if idx is None:
        return np.arange(grid.n ** 2)
    idx = np.asarray(idx)
    if idx.ndim == 2 or (idx.ndim == 1 and idx.dtype.kind == "f"):
        pts = np.atleast_2d(idx)
        return np.array([grid.index_of(p) for p in pts], dtype=np.int64)
    return idx.astype(np.int64)


def sample_kernel(f, grid: GridSpec, times, x_idx=None, y_idx=None,
                  support_radius: float | None = None) -> GridKernel:
    """Sample ``f(t, x, y)`` on the grid.

    ``f`` is called once with ``t`` of shape ``(m, 1)`` and flattened point
    pairs ``x``, ``y`` of shape ``(P, 2)``; it must return shape ``(m, P)``.
    ``x_idx`` / ``y_idx`` select rows / columns (flat indices or points).
    Pairs farther apart than ``support_radius`` are stored as exact zeros
    without evaluating ``f``.
    """
    times = np.asarray(times, dtype=float)
    xi = _resolve_idx(grid, x_idx)
    yi = _resolve_idx(grid, y_idx)
    size = len(times) * len(xi) * len(yi)
    if size > MAX_ELEMENTS:
        raise ConfigurationError(f"sampling {size} values exceeds the limit of {MAX_ELEMENTS}")
    pts = grid.points()
    X = np.broadcast_to(pts[xi][:, None, :], (len(xi), len(yi), 2)).reshape(-1, 2)
    Y = np.broadcast_to(pts[yi][None, :, :], (len(xi), len(yi), 2)).reshape(-1, 2)
    values = np.zeros((len(times), len(xi) * len(yi)), dtype=complex)
    if support_radius is not None:
        keep = np.linalg.norm(X - Y, axis=-1) <= support_radius
    else:
        keep = np.ones(len(X), dtype=bool)
    if keep.any():
        out = np.asarray(f(times[:, None], X[keep], Y[keep]))
        values[:, keep] = np.broadcast_to(out, (len(times), int(keep.sum())))
    if not np.all(np.isfinite(values)):
        raise DomainError("kernel samples are not finite")
    return GridKernel(grid, times, values.reshape(len(times), len(xi), len(yi)), xi, yi)


def _ladder_step(times):
    dt = times[0]
    if not np.allclose(times, dt * np.arange(1, len(times) + 1), rtol=1e-10, atol=0):
        raise ConfigurationError("convolution needs a uniform ladder t_j = j * dt")
    return dt


def convolve(f: GridKernel, g: GridKernel) -> GridKernel:
    """Duhamel convolution ``f * g`` on the shared grid and ladder.

    The first ladder time has no inner node; its value is set to zero and
    its endpoint error to infinity.
    """
    if f.grid.n != g.grid.n or f.grid.L != g.grid.L:
        raise ConfigurationError("convolution operands live on different grids")
    if len(f.times) != len(g.times) or not np.allclose(f.times, g.times, rtol=1e-12, atol=0):
        raise ConfigurationError("convolution operands use different time ladders")
    if not np.array_equal(f.y_idx, g.x_idx):
        if not (f.full_cols and g.full_rows):
            raise ConfigurationError(
                "convolution needs all columns of the left and all rows of the right kernel")
    dt = _ladder_step(f.times)
    m = len(f.times)
    w = f.grid.cell_area
    nx, ny = len(f.x_idx), len(g.y_idx)
    out = np.zeros((m, nx, ny), dtype=complex)
    err = np.zeros((m, nx, ny))
    err[0] = np.inf
    F, G = f.values, g.values
    for J in range(2, m + 1):
        # inner nodes s = i dt, i = 1..J-1; f at t - s = (J - i) dt
        I = np.stack([w * (F[J - i - 1] @ G[i - 1]) for i in range(1, J)])
        if J >= 3:
            lo = 2 * I[0] - I[1]
            hi = 2 * I[-1] - I[-2]
            err[J - 1] = 0.5 * dt * (np.abs(I[0] - I[1]) + np.abs(I[-1] - I[-2]))
        else:
            lo = hi = I[0]
            err[J - 1] = np.inf
        out[J - 1] = dt * (0.5 * lo + I.sum(axis=0) + 0.5 * hi)
    return GridKernel(f.grid, f.times, out, f.x_idx, g.y_idx, endpoint_error=err)


def degree_estimate(f: GridKernel, x, y, d: int = 2, skip: int = 0,
                    return_fit: bool = False):
    """Degree ``kappa`` from ``|f(t, x, y)| ~ t^(kappa - (d+2)/2)`` over the ladder.

    Ladder entries with infinite endpoint error or zero magnitude are
    dropped, as are the first ``skip`` entries.
    """
    vals = np.abs(f.series(x, y))
    keep = np.ones(len(vals), dtype=bool)
    keep[:skip] = False
    if f.endpoint_error is not None:
        keep &= np.isfinite(f.endpoint_error[:, f.row(x), f.col(y)])
    keep &= vals > 0
    if keep.sum() < 4:
        raise DomainError("degree estimate needs at least 4 nonzero samples")
    fit = fit_power_law(f.times[keep], vals[keep])
    kappa = fit.slope + (d + 2) / 2
    return (kappa, fit) if return_fit else kappa


@dataclass
class VolterraResult:
    kernel: GridKernel
    terms: list
    last_term_sup: float

    def at(self, j, x, y):
        return self.kernel.at(j, x, y)


def _kernel_fn(ev: ParametrixEvaluator, which):
    if which == "k":
        return lambda t, X, Y: ev.parametrix_eval(t, X, Y)
    return lambda t, X, Y: ev.residual(t, X, Y)


def volterra_partial_sum(ev: ParametrixEvaluator, n_max: int, grid: GridSpec, times,
                         x_idx=None, y_idx=None,
                         support_radius: float | None = None) -> VolterraResult:
    """``k_N + sum_{n=1}^{n_max} (-1)^n k_N * R_N^{*n}`` on the requested rows/columns.

    ``n_max >= 2`` samples ``R_N`` on the full grid, which is only feasible
    for coarse grids (the element limit is enforced).
    """
    if n_max < 0:
        raise ConfigurationError("n_max must be >= 0")
    if n_max > 2:
        raise ConfigurationError("n_max is capped at 2")
    times = np.asarray(times, dtype=float)
    k_fn, r_fn = _kernel_fn(ev, "k"), _kernel_fn(ev, "R")
    K = sample_kernel(k_fn, grid, times, x_idx, y_idx, support_radius)
    terms = []
    if n_max == 0:
        return VolterraResult(K, terms, 0.0)
    _ladder_step(times)
    current = sample_kernel(k_fn, grid, times, x_idx, None, support_radius)
    R_cols = sample_kernel(r_fn, grid, times, None, y_idx, support_radius)
    R_full = sample_kernel(r_fn, grid, times, None, None, support_radius) if n_max >= 2 else None
    total = K.values.copy()
    for n in range(1, n_max + 1):
        if n < n_max:
            current = convolve(current, R_full)
            # keep only the requested columns for this order's term
            term = GridKernel(grid, times, current.values[:, :, K.y_idx], K.x_idx, K.y_idx,
                              current.endpoint_error[:, :, K.y_idx])
        else:
            term = convolve(current, R_cols)
        terms.append(term)
        total = total + (-1) ** n * term.values
    out = GridKernel(grid, times, total, K.x_idx, K.y_idx)
    last = terms[-1]
    ok = np.isfinite(last.endpoint_error).all(axis=(1, 2))
    return VolterraResult(out, terms, float(np.max(np.abs(last.values[ok]))) if ok.any() else 0.0)


def partial_sum_residual(ev: ParametrixEvaluator, n_max: int, grid: GridSpec, times,
                         x_points, y, support_radius: float | None = None):
    """``(d/dt + H)`` applied to the Volterra partial sum at a few points.

    On ``k_N`` itself the time derivative is taken in closed form and ``H``
    through jets.  The correction ``C = k_N * R_N`` is differentiated in time
    by centered differences on the ladder, and its ``H`` part is
    ``(H k_N) * R_N``, sampled and convolved like any kernel.  Returns shape
    ``(m - 3, len(x_points))`` for the ladder times ``times[2:-1]`` (the first
    convolution sample carries no inner node).
    """
    if n_max not in (0, 1):
        raise ConfigurationError("partial_sum_residual supports n_max in {0, 1}")
    times = np.asarray(times, dtype=float)
    dt = _ladder_step(times)
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    y = np.asarray(y, dtype=float)

    def Hk(t, X, Y):
        return ev.hamiltonian_parametrix(np.ravel(t), X, Y)

    def Lk(t, X, Y):
        return ev.time_derivative(t, X, Y) + Hk(t, X, Y)

    xi = _resolve_idx(grid, x_points)
    yi = _resolve_idx(grid, y[None, :])
    out = sample_kernel(Lk, grid, times, xi, yi).values
    if n_max == 1:
        k_rows = sample_kernel(_kernel_fn(ev, "k"), grid, times, xi, None, support_radius)
        Hk_rows = sample_kernel(Hk, grid, times, xi, None, support_radius)
        R_cols = sample_kernel(_kernel_fn(ev, "R"), grid, times, None, yi, support_radius)
        C = convolve(k_rows, R_cols).values
        HC = convolve(Hk_rows, R_cols).values
        dC = np.zeros_like(C)
        dC[1:-1] = (C[2:] - C[:-2]) / (2 * dt)
        out = out - (dC + HC)
    return out[2:-1, :, 0]
