"""Field expressions and magnetic field configurations.

Scalar fields are small expression trees over the coordinates
``x1 .. xd``.  Every node evaluates to a :class:`~magheat.jets.TaylorJet`, so
all partial derivatives needed by the parametrix recursion are exact up to
rounding.

Expressions are written in parenthesized prefix notation, e.g.::

    (+ (^ x1 2) (sin x2))
    (* -0.5 x2)

See ``docs/config.md`` for the full grammar.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, JetEvaluationError
from .jets import TaylorJet, stack_points

__all__ = [
    "FieldExpr",
    "Const",
    "Var",
    "parse_expr",
    "x",
    "const",
    "sin",
    "cos",
    "exp",
    "eval_jet",
    "FieldConfig",
    "magnetic_field",
    "field_derivative_jet",
    "constant_field",
    "symmetric_gauge",
    "free_field",
    "gradient_expr",
]


class FieldExpr:
    """Node of a scalar field expression tree."""

    def jet(self, points, order: int) -> TaylorJet:
        """Evaluate the jet of this expression at ``points`` (shape ``(..., d)``)."""
        points = np.asarray(points, dtype=float)
        return self._jet(points, points.shape[-1], order)

    def __call__(self, points):
        return self.jet(points, 0).value

    def variables(self) -> set[int]:
        return set()

    # python-side construction sugar
    def __add__(self, other):
        return Add((self, _wrap(other)))

    def __radd__(self, other):
        return Add((_wrap(other), self))

    def __sub__(self, other):
        return Sub(self, _wrap(other))

    def __rsub__(self, other):
        return Sub(_wrap(other), self)

    def __mul__(self, other):
        return Mul((self, _wrap(other)))

    def __rmul__(self, other):
        return Mul((_wrap(other), self))

    def __truediv__(self, other):
        return Div(self, _wrap(other))

    def __rtruediv__(self, other):
        return Div(_wrap(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, n):
        return Pow(self, int(n))

    def __str__(self):
        return self.to_string()

    def __repr__(self):
        return f"FieldExpr({self.to_string()!r})"

    def __eq__(self, other):
        return isinstance(other, FieldExpr) and self.to_string() == other.to_string()

    def __hash__(self):
        return hash(self.to_string())


def _wrap(v):
    if isinstance(v, FieldExpr):
        return v
    if isinstance(v, (int, float, np.integer, np.floating)):
        return Const(float(v))
    raise TypeError(f"cannot use {type(v).__name__} in a field expression")


def _fmt(v):
    return repr(float(v)) if not float(v).is_integer() else str(int(v)) if abs(v) < 1e15 else repr(float(v))


class Const(FieldExpr):
    def __init__(self, value):
        self.value = float(value)

    def _jet(self, pts, d, order):
        return TaylorJet.constant(d, order, self.value, pts.shape[:-1])

    def to_string(self):
        return _fmt(self.value)


class Var(FieldExpr):
    """Coordinate ``x_{index+1}`` (``index`` is zero-based)."""

    def __init__(self, index):
        self.index = int(index)

    def _jet(self, pts, d, order):
        if self.index >= d:
            raise JetEvaluationError(f"variable x{self.index + 1} undefined in dimension {d}")
        return TaylorJet.variable(d, order, self.index, pts[..., self.index])

    def variables(self):
        return {self.index}

    def to_string(self):
        return f"x{self.index + 1}"


class _Nary(FieldExpr):
    symbol = ""

    def __init__(self, args):
        self.args = tuple(args)

    def variables(self):
        return set().union(*(a.variables() for a in self.args))

    def to_string(self):
        return "(" + " ".join([self.symbol] + [a.to_string() for a in self.args]) + ")"


class Add(_Nary):
    symbol = "+"

    def _jet(self, pts, d, order):
        out = self.args[0]._jet(pts, d, order)
        for a in self.args[1:]:
            out = out + a._jet(pts, d, order)
        return out


class Mul(_Nary):
    symbol = "*"

    def _jet(self, pts, d, order):
        out = self.args[0]._jet(pts, d, order)
        for a in self.args[1:]:
            if isinstance(a, Const):
                out = out * a.value
            else:
                out = out * a._jet(pts, d, order)
        return out


class Sub(_Nary):
    symbol = "-"

    def __init__(self, a, b):
        super().__init__((a, b))

    def _jet(self, pts, d, order):
        return self.args[0]._jet(pts, d, order) - self.args[1]._jet(pts, d, order)


class Neg(_Nary):
    symbol = "-"

    def __init__(self, a):
        super().__init__((a,))

    def _jet(self, pts, d, order):
        return -self.args[0]._jet(pts, d, order)


class Div(_Nary):
    symbol = "/"

    def __init__(self, a, b):
        super().__init__((a, b))

    def _jet(self, pts, d, order):
        num = self.args[0]._jet(pts, d, order)
        den = self.args[1]._jet(pts, d, order)
        if np.any(den.value == 0):
            bad = np.argwhere(np.asarray(den.value == 0).reshape(-1))[0, 0]
            where = pts.reshape(-1, d)[bad] if pts.ndim > 1 else pts
            raise JetEvaluationError(
                f"division by zero in node {self.to_string()} at x={where.tolist()}")
        return num * den.reciprocal()


class Pow(_Nary):
    symbol = "^"

    def __init__(self, a, n):
        super().__init__((a,))
        self.n = int(n)

    def _jet(self, pts, d, order):
        base = self.args[0]._jet(pts, d, order)
        if self.n < 0 and np.any(base.value == 0):
            raise JetEvaluationError(f"negative power of zero in node {self.to_string()}")
        return base ** self.n

    def to_string(self):
        return f"(^ {self.args[0].to_string()} {self.n})"


class Func(_Nary):
    def __init__(self, name, a):
        super().__init__((a,))
        self.name = name

    def _jet(self, pts, d, order):
        return getattr(self.args[0]._jet(pts, d, order), self.name)()

    def to_string(self):
        return f"({self.name} {self.args[0].to_string()})"


def x(i: int) -> Var:
    """Coordinate ``x_i`` with one-based index, as in the string grammar."""
    if i < 1:
        raise ValueError("coordinates are numbered from 1")
    return Var(i - 1)


def const(v) -> Const:
    return Const(v)


def sin(e):
    return Func("sin", _wrap(e))


def cos(e):
    return Func("cos", _wrap(e))


def exp(e):
    return Func("exp", _wrap(e))


# -- parser -----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_NAMED = {"pi": math.pi, "e": math.e}


def _tokenize(text):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ConfigurationError(f"cannot tokenize expression at column {pos + 1}: {text!r}")
        kind = "(" if m.group(1) else ")" if m.group(2) else "atom"
        out.append((kind, m.group(m.lastindex), m.start(m.lastindex) + 1))
        pos = m.end()
    return out


def parse_expr(text: str, d: int | None = None) -> FieldExpr:
    """Parse a prefix-notation field expression.

    Raises :class:`ConfigurationError` with the offending column on failure.
    """
    if not isinstance(text, str):
        return _wrap(text)
    tokens = _tokenize(text)
    if not tokens:
        raise ConfigurationError("empty field expression")
    expr, pos = _parse(tokens, 0, text)
    if pos != len(tokens):
        raise ConfigurationError(
            f"unexpected trailing input at column {tokens[pos][2]} in {text!r}")
    if d is not None:
        bad = [i + 1 for i in expr.variables() if i >= d]
        if bad:
            raise ConfigurationError(f"expression {text!r} uses x{bad[0]} but d={d}")
    return expr


def _parse(tokens, pos, text):
    if pos >= len(tokens):
        raise ConfigurationError(f"unexpected end of expression {text!r}")
    kind, tok, col = tokens[pos]
    if kind == ")":
        raise ConfigurationError(f"unexpected ')' at column {col} in {text!r}")
    if kind == "atom":
        return _atom(tok, col, text), pos + 1
    if pos + 1 >= len(tokens) or tokens[pos + 1][0] != "atom":
        raise ConfigurationError(f"expected operator after '(' at column {col} in {text!r}")
    op, opcol = tokens[pos + 1][1], tokens[pos + 1][2]
    pos += 2
    args = []
    while pos < len(tokens) and tokens[pos][0] != ")":
        if op == "^" and len(args) == 1:
            k, tok, c = tokens[pos]
            if k != "atom" or not re.fullmatch(r"[+-]?\d+", tok or ""):
                raise ConfigurationError(f"'^' needs an integer exponent at column {c} in {text!r}")
            args.append(int(tok))
            pos += 1
            continue
        a, pos = _parse(tokens, pos, text)
        args.append(a)
    if pos >= len(tokens):
        raise ConfigurationError(f"missing ')' for '(' at column {col} in {text!r}")
    pos += 1
    n = len(args)
    if op in ("+", "*"):
        if n < 1:
            raise ConfigurationError(f"'{op}' needs arguments at column {opcol} in {text!r}")
        return (args[0] if n == 1 else (Add if op == "+" else Mul)(args)), pos
    if op == "-":
        if n == 1:
            return Neg(args[0]), pos
        if n == 2:
            return Sub(args[0], args[1]), pos
    elif op == "/":
        if n == 2:
            return Div(args[0], args[1]), pos
    elif op == "^":
        if n == 2:
            return Pow(args[0], args[1]), pos
    elif op in ("sin", "cos", "exp"):
        if n == 1:
            return Func(op, args[0]), pos
    else:
        raise ConfigurationError(f"unknown operator {op!r} at column {opcol} in {text!r}")
    raise ConfigurationError(f"wrong number of arguments ({n}) for {op!r} at column {opcol} in {text!r}")


def _atom(tok, col, text):
    if _NUMBER.match(tok):
        return Const(float(tok))
    if tok in _NAMED:
        return Const(_NAMED[tok])
    m = re.fullmatch(r"x([1-9]\d*)", tok)
    if m:
        return Var(int(m.group(1)) - 1)
    raise ConfigurationError(f"unknown symbol {tok!r} at column {col} in {text!r}")


def eval_jet(f: FieldExpr, point, order: int) -> TaylorJet:
    """Raw derivatives of ``f`` at ``point`` up to total ``order``."""
    if order < 0:
        raise ConfigurationError("jet order must be non-negative")
    pts = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise ConfigurationError("evaluation point must be finite")
    return f.jet(pts, order)


# -- configurations ---------------------------------------------------------


@dataclass(frozen=True)
class FieldConfig:
    """Scalar potential ``V`` and vector potential ``A`` on R^d.

    ``m`` is the declared polynomial growth exponent (metadata only) and
    ``jet_cap`` bounds the derivative order any consumer may request.
    """

    d: int
    V: FieldExpr
    A: tuple
    m: float = 0.0
    jet_cap: int = 8
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("dimension must be positive")
        object.__setattr__(self, "V", parse_expr(self.V, self.d))
        A = tuple(parse_expr(a, self.d) for a in self.A)
        if len(A) != self.d:
            raise ConfigurationError(f"A has {len(A)} components but d={self.d}")
        object.__setattr__(self, "A", A)
        if self.jet_cap < 0:
            raise ConfigurationError("jet_cap must be non-negative")

    @classmethod
    def from_strings(cls, d, V, A, **kw):
        return cls(d, parse_expr(V, d), tuple(parse_expr(a, d) for a in A), **kw)

    def with_jet_cap(self, cap):
        return FieldConfig(self.d, self.V, self.A, self.m, cap, self.label)

    def to_dict(self):
        return {"d": self.d, "V": self.V.to_string(), "A": [a.to_string() for a in self.A],
                "m": self.m, "jet_cap": self.jet_cap}

    def _check(self, order, extra=0):
        if order < 0:
            raise ConfigurationError("jet order must be non-negative")
        if order + extra > self.jet_cap:
            raise ConfigurationError(
                f"requested derivative order {order + extra} exceeds jet_cap={self.jet_cap}")

    def potential_jet(self, points, order):
        self._check(order)
        return self.V.jet(stack_points(points, self.d), order)

    def vector_potential_jets(self, points, order):
        self._check(order)
        pts = stack_points(points, self.d)
        return [a.jet(pts, order) for a in self.A]

    def field_strength_jets(self, points, order, A_jets=None):
        """Jets of ``B_kl = dA_k/dx_l - dA_l/dx_k`` as a nested list ``[k][l]``.

        Needs vector potential jets of order ``order + 1``.
        """
        self._check(order, 1)
        if A_jets is None:
            A_jets = self.vector_potential_jets(points, order + 1)
        d = self.d
        B = [[None] * d for _ in range(d)]
        shape = A_jets[0].batch_shape
        for k in range(d):
            B[k][k] = TaylorJet.constant(d, order, 0.0, shape)
            for l in range(k + 1, d):
                b = A_jets[k].deriv(l) - A_jets[l].deriv(k)
                B[k][l] = b
                B[l][k] = -b
        return B


def magnetic_field(cfg: FieldConfig, point) -> np.ndarray:
    """Antisymmetric field-strength matrix ``B[..., k, l]`` at ``point``.

    The upper triangle is computed and mirrored with a sign flip, so
    ``B + B.T == 0`` holds exactly.
    """
    pts = stack_points(point, cfg.d)
    A = cfg.vector_potential_jets(pts, 1)
    d = cfg.d
    out = np.zeros(pts.shape[:-1] + (d, d), dtype=complex)
    for k in range(d):
        gk = A[k].gradient()
        for l in range(k + 1, d):
            b = gk[..., l] - A[l].gradient()[..., k]
            out[..., k, l] = b
            out[..., l, k] = -b
    return out.real if np.all(out.imag == 0) else out


def field_derivative_jet(cfg: FieldConfig, which, point, order: int) -> TaylorJet:
    """Jet of ``V``, ``A_j`` or ``B_kl``.

    ``which`` is ``"V"``, ``("A", j)`` or ``("B", k, l)`` with one-based indices
    as in the written formulas.
    """
    pts = stack_points(point, cfg.d)
    if which == "V":
        return cfg.potential_jet(pts, order)
    kind, *idx = which
    idx = [i - 1 for i in idx]
    if any(i < 0 or i >= cfg.d for i in idx):
        raise ConfigurationError(f"component index out of range in {which!r}")
    if kind == "A" and len(idx) == 1:
        return cfg.vector_potential_jets(pts, order)[idx[0]]
    if kind == "B" and len(idx) == 2:
        return cfg.field_strength_jets(pts, order)[idx[0]][idx[1]]
    raise ConfigurationError(f"unknown field selector {which!r}")


# -- builtin families -------------------------------------------------------


def symmetric_gauge(B: float) -> tuple:
    """``A = (B/2) (-x2, x1)``: constant field ``B_21 = B`` in d = 2."""
    return (Const(-0.5 * B) * x(2), Const(0.5 * B) * x(1))


def constant_field(B: float, V="0", jet_cap: int = 8) -> FieldConfig:
    return FieldConfig(2, parse_expr(V, 2), symmetric_gauge(B), jet_cap=jet_cap,
                       label=f"constant_field(B={B})")


def free_field(d: int = 2, V="0", jet_cap: int = 8) -> FieldConfig:
    return FieldConfig(d, parse_expr(V, d), tuple(Const(0.0) for _ in range(d)), jet_cap=jet_cap)


def gradient_expr(chi: FieldExpr, d: int) -> tuple:
    """Symbolic gradient of ``chi`` (for pure-gauge potentials)."""
    return tuple(_diff(chi, j) for j in range(d))


def _diff(e: FieldExpr, j: int) -> FieldExpr:
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.index == j else 0.0)
    if isinstance(e, Add):
        return Add(tuple(_diff(a, j) for a in e.args))
    if isinstance(e, Sub):
        return Sub(_diff(e.args[0], j), _diff(e.args[1], j))
    if isinstance(e, Neg):
        return Neg(_diff(e.args[0], j))
    if isinstance(e, Mul):
        terms = []
        for i in range(len(e.args)):
            factors = list(e.args)
            factors[i] = _diff(factors[i], j)
            terms.append(Mul(tuple(factors)))
        return Add(tuple(terms))
    if isinstance(e, Div):
        a, b = e.args
        return Div(Sub(Mul((_diff(a, j), b)), Mul((a, _diff(b, j)))), Pow(b, 2))
    if isinstance(e, Pow):
        if e.n == 0:
            return Const(0.0)
        return Mul((Const(e.n), Pow(e.args[0], e.n - 1), _diff(e.args[0], j)))
    if isinstance(e, Func):
        a = e.args[0]
        outer = {"sin": Func("cos", a), "cos": Neg(Func("sin", a)), "exp": Func("exp", a)}[e.name]
        return Mul((outer, _diff(a, j)))
    raise TypeError(f"cannot differentiate {e!r}")
