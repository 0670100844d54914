"""Truncated multivariate Taylor jets.

A :class:`TaylorJet` holds the partial derivatives ``d^alpha f(x)`` of a
function of ``d`` variables for every multi-index ``alpha`` of total degree
at most ``order``.  Coefficients are stored as *raw* derivatives (not divided
by ``alpha!``); arithmetic converts to normalized Taylor coefficients
internally.

Jets are vectorized: ``coeffs`` has shape ``(M, *batch)`` where ``M`` is the
number of multi-indices and ``batch`` is any broadcastable shape of
evaluation points.
"""

from __future__ import annotations

import functools
import math
from typing import Sequence

import numpy as np

__all__ = [
    "MultiIndex",
    "multi_indices",
    "n_coeffs",
    "TaylorJet",
]

MultiIndex = tuple


@functools.lru_cache(maxsize=None)
def multi_indices(d: int, order: int) -> tuple[MultiIndex, ...]:
    """All multi-indices of ``d`` entries with total degree <= ``order``.

    Graded ordering: degree 0 first, then degree 1, ...; within a degree,
    reverse-lexicographic (``(1, 0)`` before ``(0, 1)``).
    """
    if d < 1 or order < 0:
        raise ValueError(f"invalid jet shape d={d}, order={order}")
    out: list[MultiIndex] = []
    for deg in range(order + 1):
        out.extend(_compositions(deg, d))
    return tuple(out)


def _compositions(total, parts):
    if parts == 1:
        return [(total,)]
    res = []
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            res.append((first,) + rest)
    return res


def n_coeffs(d: int, order: int) -> int:
    return math.comb(d + order, d)


class _Tables:
    """Index bookkeeping for one (d, order) pair."""

    def __init__(self, d, order):
        self.d = d
        self.order = order
        self.alphas = multi_indices(d, order)
        self.index = {a: i for i, a in enumerate(self.alphas)}
        self.degree = np.array([sum(a) for a in self.alphas])
        self.factorial = np.array(
            [math.prod(math.factorial(k) for k in a) for a in self.alphas], dtype=float
        )
        # products in normalized coefficients: for each i, the admissible j
        # form a prefix of the graded ordering
        self.prod = []
        for i, a in enumerate(self.alphas):
            nj = n_coeffs(d, order - sum(a))
            k = np.array([self.index[tuple(p + q for p, q in zip(a, b))]
                          for b in self.alphas[:nj]])
            self.prod.append((i, nj, k))
        # d/dx_j maps the order-(p-1) jet coefficient alpha to alpha + e_j
        self.shift = []
        if order > 0:
            lower = multi_indices(d, order - 1)
            for j in range(d):
                e = [0] * d
                e[j] = 1
                self.shift.append(np.array(
                    [self.index[tuple(p + q for p, q in zip(a, e))] for a in lower]))


@functools.lru_cache(maxsize=None)
def _tables(d, order) -> _Tables:
    return _Tables(d, order)


def _expand(arr, ndim):
    """Append singleton axes so a batch-shaped array broadcasts against coeffs."""
    arr = np.asarray(arr)
    return arr.reshape(arr.shape + (1,) * (ndim - arr.ndim)) if arr.ndim < ndim else arr


class TaylorJet:
    """Raw partial derivatives of a function up to a total order.

    Parameters
    ----------
    d : int
        Number of variables.
    order : int
        Highest total derivative order kept.
    coeffs : array_like, shape (M, *batch)
        ``coeffs[i]`` is ``d^alpha f`` for ``alpha = multi_indices(d, order)[i]``.
    """

    __slots__ = ("d", "order", "coeffs")
    __array_priority__ = 100

    def __init__(self, d: int, order: int, coeffs):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[0] != n_coeffs(d, order):
            raise ValueError(
                f"expected {n_coeffs(d, order)} coefficients for d={d}, "
                f"order={order}, got {coeffs.shape[0]}")
        self.d = d
        self.order = order
        self.coeffs = coeffs

    # -- construction -------------------------------------------------------

    @classmethod
    def constant(cls, d, order, value, batch_shape=()):
        value = np.broadcast_to(np.asarray(value, dtype=complex), batch_shape)
        c = np.zeros((n_coeffs(d, order),) + value.shape, dtype=complex)
        c[0] = value
        return cls(d, order, c)

    @classmethod
    def variable(cls, d, order, j, value):
        """Jet of the coordinate function ``x_j`` at points with ``x_j = value``."""
        value = np.asarray(value, dtype=complex)
        c = np.zeros((n_coeffs(d, order),) + value.shape, dtype=complex)
        c[0] = value
        if order >= 1:
            c[1 + j] = 1.0
        return cls(d, order, c)

    @classmethod
    def from_taylor(cls, d, order, taylor):
        """Build from normalized coefficients ``d^alpha f / alpha!``."""
        t = _tables(d, order)
        taylor = np.asarray(taylor, dtype=complex)
        return cls(d, order, taylor * _expand(t.factorial, taylor.ndim))

    # -- views --------------------------------------------------------------

    @property
    def batch_shape(self):
        return self.coeffs.shape[1:]

    @property
    def value(self):
        return self.coeffs[0]

    @property
    def alphas(self):
        return multi_indices(self.d, self.order)

    def __getitem__(self, alpha):
        """Raw derivative ``d^alpha f`` for a multi-index tuple."""
        alpha = tuple(alpha)
        if len(alpha) != self.d:
            raise KeyError(f"multi-index {alpha} has wrong length for d={self.d}")
        if sum(alpha) > self.order:
            raise KeyError(f"multi-index {alpha} exceeds jet order {self.order}")
        return self.coeffs[_tables(self.d, self.order).index[alpha]]

    def taylor(self):
        t = _tables(self.d, self.order)
        return self.coeffs / _expand(t.factorial, self.coeffs.ndim)

    def gradient(self):
        """First derivatives stacked on a trailing axis, shape ``batch + (d,)``."""
        if self.order < 1:
            raise ValueError("gradient needs a jet of order >= 1")
        return np.moveaxis(self.coeffs[1:1 + self.d], 0, -1)

    def laplacian_value(self):
        if self.order < 2:
            raise ValueError("Laplacian needs a jet of order >= 2")
        t = _tables(self.d, self.order)
        idx = [t.index[tuple(2 if k == j else 0 for k in range(self.d))] for j in range(self.d)]
        return self.coeffs[idx].sum(axis=0)

    def __repr__(self):
        return f"TaylorJet(d={self.d}, order={self.order}, batch={self.batch_shape})"

    # -- structural operations ----------------------------------------------

    def truncate(self, order):
        if order > self.order:
            raise ValueError(f"cannot raise jet order {self.order} to {order}")
        if order == self.order:
            return self
        return TaylorJet(self.d, order, self.coeffs[:n_coeffs(self.d, order)])

    def deriv(self, j):
        """Jet of ``d f / d x_j``; order drops by one."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        idx = _tables(self.d, self.order).shift[j]
        return TaylorJet(self.d, self.order - 1, self.coeffs[idx])

    def laplacian(self):
        out = self.deriv(0).deriv(0)
        for j in range(1, self.d):
            out = out + self.deriv(j).deriv(j)
        return out

    def scaled(self, s):
        """Jet of ``h -> f(p + s h)`` given the jet of ``f`` at ``p``.

        Each coefficient of total degree ``m`` is multiplied by ``s**m``;
        ``s`` broadcasts against the batch shape.
        """
        t = _tables(self.d, self.order)
        s = np.asarray(s)
        powers = s[None, ...] ** _expand(t.degree, s.ndim + 1)
        return TaylorJet(self.d, self.order, self.coeffs * _expand(powers, self.coeffs.ndim))

    def map_batch(self, fn):
        """Apply ``fn`` to the coefficient array along the batch axes."""
        return TaylorJet(self.d, self.order, fn(self.coeffs))

    def conj(self):
        return TaylorJet(self.d, self.order, np.conj(self.coeffs))

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, TaylorJet):
            if other.d != self.d:
                raise ValueError("jets of different dimension")
            order = min(self.order, other.order)
            return self.truncate(order), other.truncate(order)
        return self, None

    def __add__(self, other):
        a, b = self._coerce(other)
        if b is None:
            c = a.coeffs.copy() if np.ndim(other) == 0 else np.array(
                np.broadcast_to(a.coeffs, a.coeffs.shape[:1] + np.broadcast_shapes(
                    a.batch_shape, np.shape(other))), dtype=complex)
            c[0] = c[0] + other
            return TaylorJet(a.d, a.order, c)
        return TaylorJet(a.d, a.order, a.coeffs + b.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return TaylorJet(self.d, self.order, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a, b = self._coerce(other)
        if b is None:
            return TaylorJet(a.d, a.order, a.coeffs * _expand(other, a.coeffs.ndim - 1)[None])
        return _multiply(a, b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, TaylorJet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=complex))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise TypeError("jets support integer powers only")
        if n < 0:
            return self.reciprocal() ** (-n)
        result = TaylorJet.constant(self.d, self.order, 1.0, self.batch_shape)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def reciprocal(self):
        a0 = self.value
        if np.any(a0 == 0):
            raise ZeroDivisionError("reciprocal of a jet with zero constant term")
        return self._compose(lambda n: (-1.0) ** n * math.factorial(n) / a0 ** (n + 1))

    def exp(self):
        e = np.exp(self.value)
        return self._compose(lambda n: e)

    def sin(self):
        s, c = np.sin(self.value), np.cos(self.value)
        return self._compose(lambda n: (s, c, -s, -c)[n % 4])

    def cos(self):
        s, c = np.sin(self.value), np.cos(self.value)
        return self._compose(lambda n: (c, -s, -c, s)[n % 4])

    def _compose(self, derivs):
        """``g(f)`` for univariate ``g`` with ``g^(n)(f(x))`` given by ``derivs(n)``.

        Uses ``g(a + h) = sum_n g^(n)(a) h^n / n!`` with the nilpotent part ``h``.
        """
        h_coeffs = self.coeffs.copy()
        h_coeffs[0] = 0
        h = TaylorJet(self.d, self.order, h_coeffs)
        out = TaylorJet.constant(self.d, self.order, derivs(0), self.batch_shape)
        power = None
        for n in range(1, self.order + 1):
            power = h if power is None else power * h
            out = out + power * (np.asarray(derivs(n)) / math.factorial(n))
        return out


def _multiply(a: TaylorJet, b: TaylorJet) -> TaylorJet:
    t = _tables(a.d, a.order)
    ta, tb = a.taylor(), b.taylor()
    shape = np.broadcast_shapes(ta.shape[1:], tb.shape[1:])
    out = np.zeros((ta.shape[0],) + shape, dtype=complex)
    for i, nj, k in t.prod:
        out[k] += ta[i] * tb[:nj]
    return TaylorJet.from_taylor(a.d, a.order, out)


def stack_points(points: Sequence, d: int) -> np.ndarray:
    """Coerce points to a float array with trailing axis of length ``d``."""
    x = np.asarray(points, dtype=float)
    if x.shape[-1:] != (d,):
        raise ValueError(f"points must have trailing dimension {d}, got shape {x.shape}")
    return x
