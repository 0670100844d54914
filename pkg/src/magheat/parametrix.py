"""Small-time heat parametrix for ``H = (-i grad - A)^2 + V`` on R^d.

The parametrix is

    k_N(t, x, y) = (4 pi t)^(-d/2) exp(-|x - y|^2 / 4t) sum_{k=0}^{N+1} u_k(x, y) t^k

with ``u_0`` the parallel-transport phase along the segment from ``y`` to
``x`` and ``u_k = u_0 w_k``, where the ``w_k`` solve the transport
recursion ``w_k(x, y) = int_0^1 s^(k-1) g_{k-1}(x(s), y) ds``.

Implementation notes
--------------------
All derivatives of ``w_k`` with respect to ``x`` are obtained by
differentiating under the integral sign: the coefficient of total degree
``m`` picks up a factor ``s^m``.  The recursion is evaluated on a fixed set
of collocation nodes along each segment (see
:func:`magheat.quadrature.segment_operator`), which keeps the cost linear in
the recursion depth instead of exponential.  The auxiliary fields
``alpha``, ``beta``, ``gamma`` and the closed form for ``u_1`` are also
available through direct Gauss-Legendre quadrature, which tests use as an
independent check of the collocation path.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .fields import FieldConfig
from .jets import TaylorJet, n_coeffs, multi_indices
from .quadrature import (
    DEFAULT_DOUBLE_NODES,
    DEFAULT_LINE_NODES,
    QuadratureRule,
    double_integral,
    gauss_legendre,
    line_integral,
    segment_operator,
)

__all__ = [
    "AuxFields",
    "ParametrixEvaluator",
    "apply_hamiltonian",
    "free_kernel",
]

_CHUNK = 4096


@dataclass(frozen=True)
class AuxFields:
    """``alpha`` (d,), ``beta`` (d, d) and ``gamma`` (d, d) at a pair (x, y)."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray


def free_kernel(t, x, y):
    """Heat kernel of ``-Laplace`` on R^d."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(t <= 0):
        raise DomainError("heat kernel needs t > 0")
    d = x.shape[-1]
    r2 = np.sum((x - y) ** 2, axis=-1)
    return (4 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))


def _apply_segment(jet: TaylorJet, n: int, power: int, node_axis: int = 1) -> TaylorJet:
    """``int_0^1 s^(power+|alpha|) f^(alpha)(s sigma) ds`` on the node axis."""
    if n == 1:
        # degenerate segment (x == y): the integrand is constant in s
        deg = np.array([sum(a) for a in multi_indices(jet.d, jet.order)])
        fac = 1.0 / (power + deg + 1.0)
        return TaylorJet(jet.d, jet.order, jet.coeffs * fac.reshape((-1,) + (1,) * (jet.coeffs.ndim - 1)))
    out = np.empty_like(jet.coeffs)
    start = 0
    for m in range(jet.order + 1):
        stop = n_coeffs(jet.d, m)
        _, Q = segment_operator(n, power + m)
        out[start:stop] = np.einsum("ab,gb...->ga...", Q, jet.coeffs[start:stop])
        start = stop
    return TaylorJet(jet.d, jet.order, out)


def apply_hamiltonian(cfg: FieldConfig, f: TaylorJet, points) -> TaylorJet:
    """Jet of ``H f`` given the jet of ``f`` at ``points``; order drops by two."""
    if f.order < 2:
        raise ConfigurationError("applying H needs a jet of order >= 2")
    order = f.order - 2
    A = cfg.vector_potential_jets(points, order + 1)
    V = cfg.potential_jet(points, order)
    out = V * f.truncate(order)
    for j in range(cfg.d):
        Df = f.deriv(j) - 1j * A[j] * f.truncate(f.order - 1)
        DDf = Df.deriv(j) - 1j * A[j].truncate(order) * Df.truncate(order)
        out = out - DDf
    return out


class ParametrixEvaluator:
    """Evaluate the coefficients ``u_k``, the parametrix ``k_N`` and its residual.

    Parameters
    ----------
    cfg : FieldConfig
        Potentials.
    N : int
        Parametrix order; ``k_N`` uses ``u_0 .. u_{N+1}``.
    line_nodes, double_nodes : int
        Gauss-Legendre node counts for line and double integrals.
    segment_nodes : int, optional
        Collocation nodes per segment for the recursion (default: ``line_nodes``).
    K_max : int
        Largest coefficient index the evaluator will be asked for.
    """

    def __init__(self, cfg: FieldConfig, N: int = 0, line_nodes: int = DEFAULT_LINE_NODES,
                 double_nodes: int = DEFAULT_DOUBLE_NODES, segment_nodes: int | None = None,
                 K_max: int = 3):
        if N < 0:
            raise ConfigurationError("parametrix order N must be >= 0")
        self.cfg = cfg
        self.d = cfg.d
        self.N = N
        self.K_max = max(K_max, N + 1)
        self.line_rule: QuadratureRule = gauss_legendre(line_nodes)
        self.double_rule: QuadratureRule = gauss_legendre(double_nodes)
        self.segment_nodes = segment_nodes or line_nodes
        if N < math.ceil(self.d / 2) - 1:
            warnings.warn(f"N={N} < d/2 - 1: k_N is not a parametrix in d={self.d}",
                          stacklevel=2)
        self._cache: dict = {}
        self._lock = threading.Lock()

    # -- elementary pieces --------------------------------------------------

    def _pair(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape[-1] != self.d or y.shape[-1] != self.d:
            raise ConfigurationError(f"points must have {self.d} components")
        shape = np.broadcast_shapes(x.shape, y.shape)
        return np.broadcast_to(x, shape), np.broadcast_to(y, shape)

    def phase(self, x, y):
        """``int_0^1 A(x(s)) . (x - y) ds`` (real for real A)."""
        x, y = self._pair(x, y)
        r = x - y
        s = self.line_rule.nodes
        pts = y[None] + s.reshape((-1,) + (1,) * x.ndim) * r[None]
        A = np.stack([a(pts) for a in self.cfg.A], axis=-1)
        integrand = np.sum(A * r[None], axis=-1)
        return line_integral(lambda _: integrand, self.line_rule)

    def u0(self, x, y):
        """Leading coefficient ``exp(i int_0^1 A(x(s)) . (x - y) ds)``."""
        return np.exp(1j * self.phase(x, y))

    def aux_fields(self, x, y) -> AuxFields:
        """``alpha``, ``beta``, ``gamma`` by direct line and double integrals.

        Accepts batches; the returned arrays carry the batch shape in front.
        """
        x, y = self._pair(x, y)
        d = self.d
        r = x - y
        batch = x.shape[:-1]

        def B_at(s):
            s = np.asarray(s, dtype=float)
            pts = y + s[..., None] * r if s.ndim == 0 else \
                y[None] + s.reshape(s.shape + (1,) * x.ndim) * r[None]
            return pts

        # alpha_l = sum_j int t^2 dB_jl/dx_j (x(t)) dt, beta_jl = 2 int t B_jl(x(t)) dt
        t = self.line_rule.nodes
        pts = B_at(t)
        B = self.cfg.field_strength_jets(pts, 1)
        alpha = np.zeros(batch + (d,), dtype=complex)
        beta = np.zeros(batch + (d, d), dtype=complex)
        tt = t.reshape((-1,) + (1,) * len(batch))
        for j in range(d):
            for l in range(d):
                Bjl = B[j][l]
                beta[..., j, l] = line_integral(lambda _: 2 * tt * Bjl.value, self.line_rule)
                dB = Bjl.gradient()[..., j]
                alpha[..., l] += line_integral(lambda _: tt ** 2 * dB, self.line_rule)

        # gamma_jl = sum_m int int t s B_ml(x(t)) B_mj(x(s)) dt ds
        q = self.double_rule.nodes
        Bq = self.cfg.field_strength_jets(B_at(q), 0)
        Bv = np.stack([np.stack([Bq[m][l].value for l in range(d)], axis=-1)
                       for m in range(d)], axis=-2)          # (q, *batch, m, l)
        qq = q.reshape((-1,) + (1,) * len(batch))
        Bt = qq[..., None, None] * Bv
        # integrand[i, k, ..., j, l] = t_i s_k sum_m B_ml(x(t_i)) B_mj(x(s_k))
        integrand = np.einsum("i...ml,k...mj->ik...jl", Bt, Bt)
        gamma = double_integral(lambda t_, s_: integrand, self.double_rule)
        return AuxFields(alpha, beta, gamma)

    # -- the recursion ------------------------------------------------------

    def _recursion(self, x, y, kmax, top_order, g_top=False):
        """Jets (at x, order ``top_order``) of ``w_1 .. w_kmax`` and optionally ``g_kmax``.

        ``x``, ``y`` are 2-d arrays of pairs ``(P, d)``.  Returns a dict with
        keys ``"w"`` (list, index k) and ``"g"`` (list, index k) of jets whose
        batch shape is ``(P,)``.
        """
        if g_top and top_order < 2:
            raise ConfigurationError("g_kmax needs w_kmax to order >= 2")
        d = self.d
        P = x.shape[0]
        diagonal = bool(np.all(x == y))
        n = 1 if diagonal else self.segment_nodes
        sigma = np.ones(1) if diagonal else segment_operator(n, 0)[0]

        o_w = {k: top_order + 2 * (kmax - k) for k in range(1, kmax + 1)}
        o_g = {j: o_w[j + 1] for j in range(kmax)}
        if g_top:
            o_g[kmax] = top_order - 2
        q = max(o_g.values()) if o_g else 0
        need = q + 2
        if need > self.cfg.jet_cap:
            raise ConfigurationError(
                f"recursion needs derivative order {need} but jet_cap={self.cfg.jet_cap}")

        r = x - y                                              # (P, d)
        pts = y[None] + sigma[:, None, None] * r[None]         # (n, P, d)
        A = self.cfg.vector_potential_jets(pts, q + 2)
        B = self.cfg.field_strength_jets(pts, q + 1, A_jets=A)
        V = self.cfg.potential_jet(pts, q)

        c = [[_apply_segment(B[j][l].truncate(q), n, 1) for l in range(d)] for j in range(d)]
        alpha = []
        for l in range(d):
            acc = None
            for j in range(d):
                term = B[j][l].deriv(j)
                acc = term if acc is None else acc + term
            alpha.append(_apply_segment(acc, n, 2))
        rj = [TaylorJet.variable(d, q, j, sigma[:, None] * r[None, :, j]) for j in range(d)]

        # S = V + i r.alpha + r.gamma.r ; bvec_j = sum_l r_l beta_jl
        S = V
        for l in range(d):
            S = S + 1j * rj[l] * alpha[l]
        # r.gamma.r = sum_m (sum_l c_ml r_l)^2
        bvec = []
        for m in range(d):
            cm = None
            for l in range(d):
                term = c[m][l] * rj[l]
                cm = term if cm is None else cm + term
            S = S + cm * cm
            bvec.append(2 * cm)

        def g_of(w, order):
            out = w.laplacian().truncate(order) - S.truncate(order) * w.truncate(order)
            for j in range(d):
                out = out - 1j * bvec[j].truncate(order) * w.deriv(j).truncate(order)
            return out

        shape = (n, P)
        w = {0: TaylorJet.constant(d, o_g[0] + 2 if kmax else top_order, 1.0, shape)}
        g = {}
        for k in range(1, kmax + 1):
            g[k - 1] = g_of(w[k - 1], o_g[k - 1])
            w[k] = _apply_segment(g[k - 1], n, k - 1)
        if g_top:
            g[kmax] = g_of(w[kmax], o_g[kmax])
        last = -1

        def at_x(j):
            return TaylorJet(j.d, j.order, j.coeffs[:, last])

        return {"w": {k: at_x(v) for k, v in w.items()},
                "g": {k: at_x(v) for k, v in g.items()}}

    def _batched(self, x, y, kmax, top_order, g_top=False):
        x, y = self._pair(x, y)
        batch = x.shape[:-1]
        X = x.reshape(-1, self.d)
        Y = y.reshape(-1, self.d)
        parts = []
        for lo in range(0, max(len(X), 1), _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            Xs, Ys = X[sl], Y[sl]
            diag = np.all(Xs == Ys, axis=-1)
            if diag.any() and not diag.all():
                # diagonal pairs take the quadrature-free path
                res_d = self._recursion(Xs[diag], Ys[diag], kmax, top_order, g_top)
                res_o = self._recursion(Xs[~diag], Ys[~diag], kmax, top_order, g_top)
                parts.append(_merge(res_d, res_o, diag))
            else:
                parts.append(self._recursion(Xs, Ys, kmax, top_order, g_top))
        out = {}
        for key in ("w", "g"):
            out[key] = {}
            for k in parts[0][key]:
                jets = [p[key][k] for p in parts]
                coeffs = np.concatenate([jj.coeffs for jj in jets], axis=1)
                out[key][k] = TaylorJet(self.d, jets[0].order,
                                        coeffs.reshape(coeffs.shape[:1] + batch))
        return out

    def w_k(self, k, x, y, order=0) -> TaylorJet:
        """Jet of ``w_k(., y)`` at ``x`` up to ``order`` (``w_0 = 1``)."""
        if k < 0:
            raise ConfigurationError("k must be >= 0")
        if k == 0:
            x, y = self._pair(x, y)
            return TaylorJet.constant(self.d, order, 1.0, x.shape[:-1])
        return self._batched(x, y, k, order)["w"][k]

    def g_k(self, k, x, y, order=0) -> TaylorJet:
        """Jet of the transport inhomogeneity ``g_k(., y)`` at ``x``."""
        if k < 0:
            raise ConfigurationError("k must be >= 0")
        return self._batched(x, y, k, order + 2, g_top=True)["g"][k]

    def u_k(self, k, x, y):
        """Coefficient ``u_k(x, y) = u_0(x, y) w_k(x, y)``."""
        if k == 0:
            return self.u0(x, y)
        return self.u0(x, y) * self.w_k(k, x, y).value

    def coefficients(self, x, y, kmax=None):
        """Array ``[u_0, ..., u_kmax]`` stacked on the first axis (cached for single pairs)."""
        kmax = self.N + 1 if kmax is None else kmax
        x, y = self._pair(x, y)
        key = None
        if x.ndim == 1:
            key = (x.tobytes(), y.tobytes(), kmax)
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit
        u0 = self.u0(x, y)
        out = [u0]
        if kmax >= 1:
            w = self._batched(x, y, kmax, 0)["w"]
            out += [u0 * w[k].value for k in range(1, kmax + 1)]
        out = np.stack(out)
        if key is not None:
            with self._lock:
                self._cache[key] = out
        return out

    def u1_closed_form(self, x, y):
        """``u_1`` from the explicit single-integral formula with direct aux fields."""
        x, y = self._pair(x, y)
        r = x - y
        s = self.line_rule.nodes
        shp = (-1,) + (1,) * x.ndim
        xs = y[None] + s.reshape(shp) * r[None]
        ys = np.broadcast_to(y, xs.shape)
        aux = self.aux_fields(xs, ys)
        V = self.cfg.V(xs)
        sc = s.reshape((-1,) + (1,) * (x.ndim - 1))
        ra = np.einsum("...l,...l->...", r[None], aux.alpha)
        rgr = np.einsum("...l,...lj,...j->...", r[None], aux.gamma, r[None])
        integrand = -V - 1j * sc * ra - sc ** 2 * rgr
        return line_integral(lambda _: integrand, self.line_rule) * self.u0(x, y)

    # -- kernel values ------------------------------------------------------

    def parametrix_eval(self, t, x, y):
        """``k_N(t, x, y)``; ``t`` broadcasts against the pair batch."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("parametrix needs t > 0")
        u = self.coefficients(x, y)
        x, y = self._pair(x, y)
        series = sum(u[k] * t ** k for k in range(self.N + 2))
        return free_kernel(t, x, y) * series

    def time_derivative(self, t, x, y):
        """``d/dt k_N(t, x, y)`` in closed form (Gaussian prefactor and series)."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("parametrix needs t > 0")
        u = self.coefficients(x, y)
        x, y = self._pair(x, y)
        r2 = np.sum((x - y) ** 2, axis=-1)
        series = sum(u[k] * t ** k for k in range(self.N + 2))
        dseries = sum(k * u[k] * t ** (k - 1) for k in range(1, self.N + 2))
        return free_kernel(t, x, y) * ((r2 / (4 * t ** 2) - self.d / (2 * t)) * series + dseries)

    def residual(self, t, x, y):
        """``R_N = (d/dt + H) k_N`` from its closed form in ``g_{N+1}``."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("residual needs t > 0")
        gN = self.g_value(self.N + 1, x, y)
        x, y = self._pair(x, y)
        r2 = np.sum((x - y) ** 2, axis=-1)
        return (-(4 * np.pi) ** (-self.d / 2) * t ** (self.N + 1 - self.d / 2)
                * np.exp(-r2 / (4 * t)) * self.u0(x, y) * gN)

    def g_value(self, k, x, y):
        x, y = self._pair(x, y)
        key = None
        if x.ndim == 1:
            key = ("g", x.tobytes(), y.tobytes(), k)
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit
        val = self.g_k(k, x, y).value
        if key is not None:
            with self._lock:
                self._cache[key] = val
        return val

    def heat_invariant(self, k, x):
        """Diagonal coefficient ``a_k(x) = u_k(x, x) = g_{k-1}(x, x) / k``."""
        if k == 0:
            x = np.asarray(x, dtype=float)
            return np.ones(x.shape[:-1], dtype=complex)
        if k < 1:
            raise ConfigurationError("k must be >= 0")
        return self.g_k(k - 1, x, x).value / k

    # -- jets in x ----------------------------------------------------------

    def u0_jet(self, x, y, order) -> TaylorJet:
        """Jet of ``u_0(., y)`` at ``x`` (differentiating the phase integral)."""
        x, y = self._pair(x, y)
        r = x - y
        s = self.line_rule.nodes
        shp = (-1,) + (1,) * (x.ndim - 1)
        pts = y[None] + s.reshape(shp + (1,)) * r[None]
        A = self.cfg.vector_potential_jets(pts, order)
        phase = None
        for j in range(self.d):
            rj = TaylorJet.variable(self.d, order, j, np.broadcast_to(r[..., j], x.shape[:-1]))
            Aj = A[j].scaled(s.reshape(shp))
            Aj = TaylorJet(self.d, order, np.tensordot(self.line_rule.weights, Aj.coeffs, axes=(0, 1)))
            term = Aj * rj
            phase = term if phase is None else phase + term
        return (1j * phase).exp()

    def parametrix_jet(self, t, x, y, order) -> TaylorJet:
        """Jet of ``k_N(t, ., y)`` at ``x``; ``t`` is a scalar."""
        if t <= 0:
            raise DomainError("parametrix needs t > 0")
        x, y = self._pair(x, y)
        u0 = self.u0_jet(x, y, order)
        res = self._batched(x, y, self.N + 1, order)["w"]
        series = TaylorJet.constant(self.d, order, 1.0, x.shape[:-1])
        for k in range(1, self.N + 2):
            series = series + res[k] * t ** k
        r2 = None
        for j in range(self.d):
            rj = TaylorJet.variable(self.d, order, j, (x - y)[..., j])
            r2 = rj * rj if r2 is None else r2 + rj * rj
        gauss = (r2 * (-1.0 / (4 * t))).exp() * (4 * np.pi * t) ** (-self.d / 2)
        return gauss * u0 * series

    def hamiltonian_parametrix(self, t, x, y):
        """``(H k_N)(t, ., y)`` at ``x`` via jets, for an array of times.

        The t-independent jets are built once; returns shape ``t.shape + batch``.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t <= 0):
            raise DomainError("parametrix needs t > 0")
        x, y = self._pair(x, y)
        order = 2
        u0 = self.u0_jet(x, y, order)
        res = self._batched(x, y, self.N + 1, order)["w"]
        r2 = None
        for j in range(self.d):
            rj = TaylorJet.variable(self.d, order, j, (x - y)[..., j])
            r2 = rj * rj if r2 is None else r2 + rj * rj
        out = np.empty(t.shape + x.shape[:-1], dtype=complex)
        for idx, tj in np.ndenumerate(t):
            series = TaylorJet.constant(self.d, order, 1.0, x.shape[:-1])
            for k in range(1, self.N + 2):
                series = series + res[k] * tj ** k
            gauss = (r2 * (-1.0 / (4 * tj))).exp() * (4 * np.pi * tj) ** (-self.d / 2)
            out[idx] = apply_hamiltonian(self.cfg, gauss * u0 * series, x).value
        return out

    def check_covariant_derivative_identity(self, x, y) -> float:
        """Max deviation in ``(d_j - i A_j) u_0 = -i sum_l (x_l - y_l) int t B_jl dt u_0``."""
        x, y = self._pair(x, y)
        u0 = self.u0_jet(x, y, 1)
        A = [a(x) for a in self.cfg.A]
        lhs = u0.gradient() - 1j * np.stack(A, axis=-1) * u0.value[..., None]
        aux = self.aux_fields(x, y)
        r = x - y
        rhs = -1j * 0.5 * np.einsum("...jl,...l->...j", aux.beta, r) * u0.value[..., None]
        return float(np.max(np.abs(lhs - rhs)))

    def clear_cache(self):
        with self._lock:
            self._cache.clear()


def _merge(res_d, res_o, mask):
    out = {}
    for key in ("w", "g"):
        out[key] = {}
        for k in res_d[key]:
            a, b = res_d[key][k], res_o[key][k]
            coeffs = np.empty(a.coeffs.shape[:1] + mask.shape, dtype=complex)
            coeffs[:, mask] = a.coeffs
            coeffs[:, ~mask] = b.coeffs
            out[key][k] = TaylorJet(a.d, a.order, coeffs)
    return out
