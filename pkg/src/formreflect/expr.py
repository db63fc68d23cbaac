"""Exactly differentiable expression trees over chart coordinates.

Trees are immutable and hash-consed: two structurally equal trees built
while either is alive are the same object, so equality is identity and
derivative/evaluation caches are shared across every tree that reuses a
subexpression.  Constants are stored as :class:`fractions.Fraction`, which
keeps polynomial arithmetic exact when the inputs are rational.

The only non-smooth primitives are ``abs(xn)`` and ``sgn(xn)`` of the last
(reflection) coordinate, with ``sgn(0) = +1``.
"""
from __future__ import annotations

import math
import re
import weakref
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError, EvaluationError, NotExactError, ParseError, StencilError

_LEAVES = ("const", "var", "absn", "sgnn")
_UNARY = ("sin", "cos", "exp", "sqrt")
_BINARY = ("add", "mul", "div")

_interned: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    __slots__ = ("kind", "payload", "args", "_fval", "_dcache", "_topo", "_piecewise", "__weakref__")

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    # Arithmetic sugar for building fields in code.
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise DomainError("only integer powers are supported")
        return power(self, k)

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    @property
    def value(self) -> Fraction:
        if self.kind != "const":
            raise DomainError("not a constant")
        return self.payload

    @property
    def piecewise(self) -> bool:
        """True iff the tree contains an ``abs``/``sgn`` node."""
        if self._piecewise is None:
            self._piecewise = any(node.kind in ("absn", "sgnn") for node in topo_order(self))
        return self._piecewise

    def variables(self) -> set[int]:
        out = set()
        for node in topo_order(self):
            if node.kind in ("var", "absn", "sgnn"):
                out.add(node.payload)
        return out


def _make(kind, payload=None, args=()):
    key = (kind, payload, tuple(id(a) for a in args))
    node = _interned.get(key)
    if node is not None:
        return node
    node = object.__new__(Expr)
    node.kind = kind
    node.payload = payload
    node.args = tuple(args)
    node._fval = float(payload) if kind == "const" else None
    node._dcache = {}
    node._topo = None
    node._piecewise = None
    _interned[key] = node
    return node


# ---------------------------------------------------------------------------
# smart constructors (constant folding only)


def const(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError(f"non-finite constant {value}")
    return _make("const", Fraction(value))


ZERO = None  # populated below
ONE = None


def var(i: int) -> Expr:
    if i < 1:
        raise DomainError(f"variable index {i} < 1")
    return _make("var", int(i))


def abs_last(n: int) -> Expr:
    return _make("absn", int(n))


def sgn_last(n: int) -> Expr:
    return _make("sgnn", int(n))


def as_expr(x) -> Expr:
    return x if isinstance(x, Expr) else const(x)


def _is(e: Expr, v) -> bool:
    return e.kind == "const" and e.payload == v


def add(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        return const(a.payload + b.payload)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return _make("add", None, (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        return const(a.payload * b.payload)
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    return _make("mul", None, (a, b))


def neg(a: Expr) -> Expr:
    return mul(const(-1), a)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def div(a: Expr, b: Expr) -> Expr:
    if b.kind == "const":
        if b.payload == 0:
            raise EvaluationError("division by constant zero")
        if a.kind == "const":
            return const(a.payload / b.payload)
        if b.payload == 1:
            return a
    if _is(a, 0):
        return ZERO
    return _make("div", None, (a, b))


def power(a: Expr, k: int) -> Expr:
    k = int(k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    if a.kind == "const":
        if a.payload == 0 and k < 0:
            raise EvaluationError("zero to a negative power")
        return const(a.payload ** k)
    return _make("pow", k, (a,))


def _exact_sqrt(q: Fraction):
    if q < 0:
        return None
    num, den = q.numerator, q.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd)
    return None


def sin(a: Expr) -> Expr:
    if _is(a, 0):
        return ZERO
    return _make("sin", None, (a,))


def cos(a: Expr) -> Expr:
    if _is(a, 0):
        return ONE
    return _make("cos", None, (a,))


def exp(a: Expr) -> Expr:
    if _is(a, 0):
        return ONE
    return _make("exp", None, (a,))


def sqrt(a: Expr) -> Expr:
    if a.kind == "const":
        r = _exact_sqrt(a.payload)
        if r is not None:
            return const(r)
        if a.payload < 0:
            raise EvaluationError("sqrt of negative constant")
    return _make("sqrt", None, (a,))


ZERO = const(0)
ONE = const(1)

_UNARY_CTOR = {"sin": sin, "cos": cos, "exp": exp, "sqrt": sqrt}


def total(terms) -> Expr:
    """Sum a sequence with a balanced tree (keeps depth logarithmic)."""
    terms = [t for t in terms if not _is(t, 0)]
    if not terms:
        return ZERO
    while len(terms) > 1:
        nxt = [add(terms[i], terms[i + 1]) for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0]


def product(factors) -> Expr:
    out = ONE
    for f in factors:
        out = mul(out, f)
    return out


def rebuild(node: Expr, args) -> Expr:
    """Reconstruct ``node`` with new children through the smart constructors."""
    k = node.kind
    if k == "add":
        return add(*args)
    if k == "mul":
        return mul(*args)
    if k == "div":
        return div(*args)
    if k == "pow":
        return power(args[0], node.payload)
    if k in _UNARY_CTOR:
        return _UNARY_CTOR[k](args[0])
    return node


# ---------------------------------------------------------------------------
# traversal


def topo_order(root: Expr) -> list[Expr]:
    """Children-first ordering of the distinct nodes of ``root``."""
    if root._topo is not None:
        return root._topo
    seen = set()
    order = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in node.args:
            if id(child) not in seen:
                stack.append((child, False))
    root._topo = order
    return order


def _order_many(roots) -> list[Expr]:
    seen = set()
    out = []
    for r in roots:
        for node in topo_order(r):
            if id(node) not in seen:
                seen.add(id(node))
                out.append(node)
    return out


def substitute(root: Expr, mapping: dict[int, Expr]) -> Expr:
    """Replace variables ``x_i`` by ``mapping[i]`` (abs/sgn of x_n become abs/sgn of the image only if it is x_n)."""
    memo = {}
    for node in topo_order(root):
        if node.kind == "var":
            memo[id(node)] = mapping.get(node.payload, node)
        elif node.kind in ("absn", "sgnn"):
            image = mapping.get(node.payload)
            if image is None or image is var(node.payload):
                memo[id(node)] = node
            elif image.kind == "const":
                v = image.payload
                memo[id(node)] = const(abs(v)) if node.kind == "absn" else const(1 if v >= 0 else -1)
            else:
                raise DomainError("abs/sgn nodes only compose with the reflection coordinate")
        elif node.kind == "const":
            memo[id(node)] = node
        else:
            memo[id(node)] = rebuild(node, [memo[id(a)] for a in node.args])
    return memo[id(root)]


def derivative(root: Expr, i: int) -> Expr:
    """Exact partial derivative with respect to ``x_i``.

    ``d|xn|/dxn = sgn(xn)`` and ``d sgn(xn)/dxn = 0``; the latter is exact off
    the interface and the convention on it.
    """
    cached = root._dcache.get(i)
    if cached is not None:
        return cached
    for node in topo_order(root):
        if i in node._dcache:
            continue
        k = node.kind
        if k == "const" or k == "sgnn":
            d = ZERO
        elif k == "var":
            d = ONE if node.payload == i else ZERO
        elif k == "absn":
            d = sgn_last(node.payload) if node.payload == i else ZERO
        else:
            a = node.args[0]
            da = a._dcache[i]
            if k == "add":
                d = add(da, node.args[1]._dcache[i])
            elif k == "mul":
                b = node.args[1]
                d = add(mul(da, b), mul(a, b._dcache[i]))
            elif k == "div":
                b = node.args[1]
                db = b._dcache[i]
                if _is(db, 0):
                    d = div(da, b)
                else:
                    d = div(sub(mul(da, b), mul(a, db)), power(b, 2))
            elif k == "pow":
                kk = node.payload
                d = mul(mul(const(kk), power(a, kk - 1)), da)
            elif k == "sin":
                d = mul(cos(a), da)
            elif k == "cos":
                d = neg(mul(sin(a), da))
            elif k == "exp":
                d = mul(node, da)
            elif k == "sqrt":
                d = div(da, mul(const(2), node))
            else:  # pragma: no cover
                raise AssertionError(k)
        node._dcache[i] = d
    return root._dcache[i]


def multi_derivative(root: Expr, alpha) -> Expr:
    """``∂^alpha root`` with ``alpha`` a tuple of orders per coordinate (1-based positions)."""
    out = root
    for pos, order in enumerate(alpha, start=1):
        for _ in range(order):
            out = derivative(out, pos)
    return out


# ---------------------------------------------------------------------------
# evaluation


def _as_points(points, n=None):
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if n is not None and pts.shape[1] != n:
        raise DomainError(f"expected points of dimension {n}, got {pts.shape[1]}")
    return pts, single


def evaluate_many(roots, points) -> np.ndarray:
    """Evaluate several trees at an ``(N, n)`` point array; returns ``(len(roots), N)``."""
    pts, _ = _as_points(points)
    npts = pts.shape[0]
    memo = {}
    for node in _order_many(roots):
        k = node.kind
        if k == "const":
            v = node._fval
        elif k == "var":
            if node.payload > pts.shape[1]:
                raise DomainError(f"variable x{node.payload} exceeds point dimension {pts.shape[1]}")
            v = pts[:, node.payload - 1]
        elif k == "absn":
            v = np.abs(pts[:, node.payload - 1])
        elif k == "sgnn":
            v = np.where(pts[:, node.payload - 1] >= 0.0, 1.0, -1.0)
        else:
            a = memo[id(node.args[0])]
            if k == "add":
                v = a + memo[id(node.args[1])]
            elif k == "mul":
                v = a * memo[id(node.args[1])]
            elif k == "div":
                b = memo[id(node.args[1])]
                if np.any(np.asarray(b) == 0.0):
                    raise EvaluationError("division by zero during evaluation")
                v = a / b
            elif k == "pow":
                if node.payload < 0 and np.any(np.asarray(a) == 0.0):
                    raise EvaluationError("zero to a negative power")
                v = np.power(a, float(node.payload))
            elif k == "sin":
                v = np.sin(a)
            elif k == "cos":
                v = np.cos(a)
            elif k == "exp":
                v = np.exp(a)
            elif k == "sqrt":
                if np.any(np.asarray(a) < 0.0):
                    raise EvaluationError("sqrt of a negative value")
                v = np.sqrt(a)
            else:  # pragma: no cover
                raise AssertionError(k)
        memo[id(node)] = v
    out = np.empty((len(roots), npts))
    for row, r in enumerate(roots):
        out[row] = memo[id(r)]
    return out


def evaluate_expr(root: Expr, points):
    """Float evaluation; a single point gives a float, an ``(N, n)`` array gives an array."""
    pts, single = _as_points(points)
    vals = evaluate_many([root], pts)[0]
    return float(vals[0]) if single else vals


def evaluate_exact(root: Expr, point) -> Fraction:
    """Rational evaluation; raises :class:`NotExactError` on transcendental values."""
    pt = [Fraction(p) for p in point]
    memo = {}
    for node in topo_order(root):
        k = node.kind
        if k == "const":
            v = node.payload
        elif k == "var":
            v = pt[node.payload - 1]
        elif k == "absn":
            v = abs(pt[node.payload - 1])
        elif k == "sgnn":
            v = Fraction(1 if pt[node.payload - 1] >= 0 else -1)
        else:
            a = memo[id(node.args[0])]
            if k == "add":
                v = a + memo[id(node.args[1])]
            elif k == "mul":
                v = a * memo[id(node.args[1])]
            elif k == "div":
                b = memo[id(node.args[1])]
                if b == 0:
                    raise EvaluationError("division by zero during evaluation")
                v = a / b
            elif k == "pow":
                if a == 0 and node.payload < 0:
                    raise EvaluationError("zero to a negative power")
                v = a ** node.payload
            elif k == "sqrt":
                v = _exact_sqrt(a)
                if v is None:
                    raise NotExactError(f"sqrt({a}) is not rational")
            elif a == 0 and k in ("sin", "cos", "exp"):
                v = Fraction(0 if k == "sin" else 1)
            else:
                raise NotExactError(f"{k}({a}) is not rational")
        memo[id(node)] = v
    return memo[id(root)]


# ---------------------------------------------------------------------------
# printing and parsing

_PREC = {"add": 1, "mul": 2, "div": 2, "pow": 3}


def _prec(e: Expr) -> int:
    return _PREC.get(e.kind, 4)


def _const_str(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator) if q >= 0 else f"({q.numerator})"
    return f"({q.numerator}/{q.denominator})"


def to_string(root: Expr) -> str:
    """Render in the input grammar; parsing the result gives back ``root``."""
    memo = {}
    for node in topo_order(root):
        k = node.kind
        if k == "const":
            s = _const_str(node.payload)
        elif k == "var":
            s = f"x{node.payload}"
        elif k == "absn":
            s = f"abs(x{node.payload})"
        elif k == "sgnn":
            s = f"sgn(x{node.payload})"
        elif k in _UNARY:
            s = f"{k}({memo[id(node.args[0])]})"
        elif k == "pow":
            a = node.args[0]
            base = memo[id(a)]
            if _prec(a) <= 3:
                base = f"({base})"
            e = node.payload
            s = f"{base}^{e}" if e >= 0 else f"{base}^({e})"
        else:
            a, b = node.args
            p = _PREC[k]
            left = memo[id(a)]
            right = memo[id(b)]
            if _prec(a) < p:
                left = f"({left})"
            if _prec(b) <= p:
                right = f"({right})"
            op = {"add": " + ", "mul": "*", "div": "/"}[k]
            s = f"{left}{op}{right}"
        memo[id(node)] = s
    return memo[id(root)]


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_FUNCS = {"sin", "cos", "exp", "sqrt", "abs", "sgn"}


class _Parser:
    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.tokens = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise ParseError(f"unexpected character {text[pos:].lstrip()[:1]!r}", pos)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value:
            raise ParseError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            if op == "*":
                e = mul(e, rhs)
            else:
                pos = self.tokens[self.i - 1][2]
                try:
                    e = div(e, rhs)
                except EvaluationError:
                    raise ParseError("division by constant zero", pos) from None
        return e

    def unary(self):
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            _, _, pos = self.take()
            exponent = self.unary()
            if exponent.kind != "const" or exponent.payload.denominator != 1:
                raise ParseError("exponent must be an integer constant", pos)
            try:
                return power(base, int(exponent.payload))
            except EvaluationError:
                raise ParseError("zero to a negative power", pos) from None
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return const(Fraction(text))
        if kind == "name":
            if text in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                if text in ("abs", "sgn"):
                    if arg is not var(self.n):
                        raise ParseError(f"{text} accepts only the reflection coordinate x{self.n}", pos)
                    return abs_last(self.n) if text == "abs" else sgn_last(self.n)
                try:
                    return _UNARY_CTOR[text](arg)
                except EvaluationError as exc:
                    raise ParseError(str(exc), pos) from None
            if text == "pi":
                return const(math.pi)
            m = re.fullmatch(r"x(\d+)", text)
            if m:
                i = int(m.group(1))
                if not 1 <= i <= self.n:
                    raise ParseError(f"variable {text} out of range x1..x{self.n}", pos)
                return var(i)
            raise ParseError(f"unknown identifier {text!r}", pos)
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected token {text or 'end of input'!r}", pos)


def parse_expression(text: str, n: int) -> Expr:
    """Parse the field-definition grammar (x1..x9, + - * / ^, sin cos exp sqrt abs sgn)."""
    if n < 1:
        raise DomainError(f"ambient dimension {n} < 1")
    return _Parser(str(text), n).parse()


# ---------------------------------------------------------------------------
# domains and scalar fields

SHAPES = ("ball", "half-ball", "torus", "box", "box-face", "annulus")


@dataclass(frozen=True)
class ChartDomain:
    """Coordinate domain of a chart.

    ``half-ball`` is ``B_r ∩ {x_n >= 0}``; ``box-face`` is an axis-aligned box
    whose lower face in ``x_n`` is the boundary ``{x_n = 0}``; ``torus`` is a
    periodic box; ``annulus`` is ``inner <= |x| <= radius``.
    """

    n: int
    shape: str = "ball"
    radius: float = 1.0
    lower: tuple | None = None
    upper: tuple | None = None
    inner: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DomainError(f"unknown domain shape {self.shape!r}")
        if self.radius <= 0:
            raise DomainError("radius must be positive")
        if self.shape in ("torus", "box", "box-face"):
            if self.lower is None or self.upper is None:
                raise DomainError(f"{self.shape} needs lower and upper bounds")
            object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
            object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
            if self.shape == "box-face" and self.lower[-1] != 0.0:
                raise DomainError("box-face domains have their boundary face at x_n = 0")

    @property
    def has_interface(self) -> bool:
        return self.shape in ("half-ball", "box-face")

    def contains(self, points, tol: float = 1e-12):
        pts, single = _as_points(points, self.n)
        if self.shape in ("ball", "half-ball", "annulus"):
            rad = np.linalg.norm(pts, axis=1)
            ok = rad <= self.radius + tol
            if self.shape == "half-ball":
                ok &= pts[:, -1] >= -tol
            if self.shape == "annulus":
                ok &= rad >= self.inner - tol
        elif self.shape == "torus":
            ok = np.ones(len(pts), dtype=bool)
        else:
            lo, hi = np.array(self.lower), np.array(self.upper)
            ok = np.all((pts >= lo - tol) & (pts <= hi + tol), axis=1)
        return bool(ok[0]) if single else ok

    def on_boundary(self, points, tol: float = 1e-9):
        """Mask of points on the identified boundary portion ``{x_n = 0}`` (or the annulus circles)."""
        pts, single = _as_points(points, self.n)
        if self.has_interface:
            ok = np.abs(pts[:, -1]) <= tol
        elif self.shape == "annulus":
            rad = np.linalg.norm(pts, axis=1)
            ok = (np.abs(rad - self.inner) <= tol) | (np.abs(rad - self.radius) <= tol)
        else:
            ok = np.zeros(len(pts), dtype=bool)
        return bool(ok[0]) if single else ok

    def reflected(self) -> "ChartDomain":
        if self.shape == "half-ball":
            return ChartDomain(self.n, "ball", self.radius)
        if self.shape == "box-face":
            lower = self.lower[:-1] + (-self.upper[-1],)
            return ChartDomain(self.n, "box", self.radius, lower, self.upper)
        raise DomainError(f"domain shape {self.shape!r} has no reflection interface")

    def to_dict(self) -> dict:
        out = {"n": self.n, "shape": self.shape, "radius": self.radius}
        if self.lower is not None:
            out["lower"] = list(self.lower)
            out["upper"] = list(self.upper)
        if self.shape == "annulus":
            out["inner"] = self.inner
        return out


@dataclass(frozen=True)
class ScalarField:
    expr: Expr
    domain: ChartDomain | None = None

    @property
    def n(self) -> int | None:
        return None if self.domain is None else self.domain.n

    @property
    def smoothness(self) -> str:
        return "piecewise-smooth" if self.expr.piecewise else "smooth"

    def evaluate(self, points):
        if self.domain is not None:
            inside = np.atleast_1d(self.domain.contains(points))
            if not inside.all():
                bad = np.asarray(points, dtype=float).reshape(-1, self.domain.n)[~inside][0]
                raise DomainError(f"point {bad.tolist()} outside the chart domain")
        return evaluate_expr(self.expr, points)

    def partial(self, i: int) -> "ScalarField":
        if self.domain is not None and not 1 <= i <= self.domain.n:
            raise DomainError(f"direction {i} out of range")
        return ScalarField(derivative(self.expr, i), self.domain)

    def __str__(self):
        return to_string(self.expr)


def evaluate(f, points):
    """Evaluate a :class:`ScalarField` (domain-checked) or a bare :class:`Expr`."""
    if isinstance(f, ScalarField):
        return f.evaluate(points)
    return evaluate_expr(f, points)


def partial(f, i: int):
    if isinstance(f, ScalarField):
        return f.partial(i)
    return derivative(f, i)


def reflect_expr(e: Expr, n: int, flip: bool) -> Expr:
    """``x -> f(x', |x_n|)``, times ``sgn(x_n)`` when ``flip``."""
    out = substitute(e, {n: abs_last(n)})
    return mul(sgn_last(n), out) if flip else out


def compose_reflection(f: ScalarField, flip: bool) -> ScalarField:
    """Extend a field on a half-domain to the full domain by even/odd reflection."""
    if f.domain is None or not f.domain.has_interface:
        raise DomainError("field domain has no reflection interface")
    return ScalarField(reflect_expr(f.expr, f.domain.n, flip), f.domain.reflected())


def finite_diff_partial(f, i: int, p, h: float = 1e-5, stencil: str = "central") -> float:
    """Difference quotient oracle: ``central``, ``forward`` or ``backward``."""
    p = np.asarray(p, dtype=float)
    step = np.zeros_like(p)
    step[i - 1] = h
    domain = f.domain if isinstance(f, ScalarField) else None
    expr = f.expr if isinstance(f, ScalarField) else f
    if stencil == "central":
        pts = [p + step, p - step]
    elif stencil == "forward":
        pts = [p + step, p]
    elif stencil == "backward":
        pts = [p, p - step]
    else:
        raise DomainError(f"unknown stencil {stencil!r}")
    if domain is not None:
        for side, q in (("forward", pts[0]), ("backward", pts[1])):
            if not domain.contains(q):
                raise StencilError(f"{side} stencil point {q.tolist()} leaves the domain", side)
    hi, lo = evaluate_many([expr], np.array(pts))[0]
    return float((hi - lo) / (2 * h if stencil == "central" else h))
