"""Metrics and k-forms in a chart: d, Hodge star, codifferential, norms.

Symbolic operators (``exterior_derivative``, ``hodge_star``,
``codifferential``) return new :class:`FormField` objects whose coefficients
are expression trees.  Pointwise quantities (fiber norms, boundary parts,
residuals) are computed numerically from evaluated coefficient arrays with
an independent linear-algebra path (``numpy.linalg``), so identities such as
``|*w| = |w|`` compare two different code paths.

Sign convention: on k-forms ``delta = (-1)**(n*(k+1)+1) * d *``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from . import expr as ex
from .errors import ChartNotAdaptedError, DomainError, MetricDegeneracyError
from .expr import ChartDomain, Expr
from .indices import (
    MultiIndex,
    complement_with_sign,
    enumerate_multi_indices,
    insert_index,
    merged,
    parse_label,
)
from .reports import Report

TAGS = (None, "normal-zero", "tangential-zero")


def symbolic_det(m) -> Expr:
    """Determinant of a square matrix of trees by memoized cofactor expansion."""
    size = len(m)
    memo = {}

    def minor(rows: tuple, cols: tuple) -> Expr:
        if not rows:
            return ex.ONE
        key = (rows, cols)
        if key in memo:
            return memo[key]
        r = rows[0]
        terms = []
        for pos, c in enumerate(cols):
            entry = m[r][c]
            if entry.is_const and entry.value == 0:
                continue
            sub = minor(rows[1:], cols[:pos] + cols[pos + 1:])
            term = ex.mul(entry, sub)
            terms.append(term if pos % 2 == 0 else ex.neg(term))
        out = ex.total(terms)
        memo[key] = out
        return out

    return minor(tuple(range(size)), tuple(range(size)))


@dataclass(frozen=True, eq=False)
class MetricField:
    """Symmetric matrix of trees ``g_ij`` (0-based storage, 1-based API)."""

    entries: tuple
    domain: ChartDomain | None = None

    def __post_init__(self):
        rows = tuple(tuple(ex.as_expr(e) for e in row) for row in self.entries)
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise DomainError("metric must be square")
        object.__setattr__(self, "entries", rows)
        for i in range(n):
            for j in range(i + 1, n):
                if rows[i][j] is not rows[j][i]:
                    probe = np.random.default_rng(0).uniform(-0.5, 0.5, size=(8, n))
                    a, b = ex.evaluate_many([rows[i][j], rows[j][i]], probe)
                    if not np.allclose(a, b, rtol=0, atol=1e-12):
                        raise DomainError(f"metric not symmetric in entries ({i + 1},{j + 1})")

    @classmethod
    def euclidean(cls, n: int, domain: ChartDomain | None = None) -> "MetricField":
        return cls(tuple(tuple(ex.ONE if i == j else ex.ZERO for j in range(n)) for i in range(n)), domain)

    @classmethod
    def from_strings(cls, rows, n: int, domain: ChartDomain | None = None) -> "MetricField":
        return cls(tuple(tuple(_coerce(e, n) for e in row) for row in rows), domain)

    @property
    def n(self) -> int:
        return len(self.entries)

    def g(self, i: int, j: int) -> Expr:
        return self.entries[i - 1][j - 1]

    @cached_property
    def det(self) -> Expr:
        return symbolic_det(self.entries)

    @cached_property
    def sqrt_det(self) -> Expr:
        return ex.sqrt(self.det)

    @cached_property
    def inverse(self) -> tuple:
        """``g^ij`` as adjugate over determinant."""
        n = self.n
        out = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                # (g^-1)_ij = (-1)^(i+j) M_ji / det
                rows = [r for r in range(n) if r != j]
                cols = [c for c in range(n) if c != i]
                minor = symbolic_det([[self.entries[r][c] for c in cols] for r in rows])
                cof = minor if (i + j) % 2 == 0 else ex.neg(minor)
                out[i][j] = ex.div(cof, self.det)
        return tuple(tuple(r) for r in out)

    def ginv(self, i: int, j: int) -> Expr:
        return self.inverse[i - 1][j - 1]

    def inverse_minor(self, rows, cols) -> Expr:
        """``det((g^-1)[rows, cols])`` via Jacobi's complementary-minor identity."""
        key = (tuple(rows), tuple(cols))
        cache = self.__dict__.setdefault("_inverse_minors", {})
        if key in cache:
            return cache[key]
        n = self.n
        rc = [c for c in range(1, n + 1) if c not in cols]
        cc = [r for r in range(1, n + 1) if r not in rows]
        sub = [[self.entries[a - 1][b - 1] for b in cc] for a in rc]
        sign = -1 if (sum(rows) + sum(cols)) % 2 else 1
        out = ex.div(symbolic_det(sub), self.det) if sub else ex.div(ex.ONE, self.det)
        out = ex.neg(out) if sign < 0 else out
        cache[key] = out
        return out

    def values(self, points) -> np.ndarray:
        """Evaluated matrices, shape ``(N, n, n)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        flat = ex.evaluate_many([e for row in self.entries for e in row], pts)
        return flat.T.reshape(len(pts), n, n)

    def leading_minors(self, points) -> np.ndarray:
        """Leading principal minors, shape ``(N, n)``."""
        gv = self.values(points)
        return np.stack([np.linalg.det(gv[:, :m, :m]) for m in range(1, self.n + 1)], axis=1)

    def check_positive_definite(self, points) -> None:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        minors = self.leading_minors(pts)
        bad = np.nonzero(np.any(minors <= 0.0, axis=1))[0]
        if len(bad):
            raise MetricDegeneracyError(
                f"metric not positive definite at {pts[bad[0]].tolist()}", pts[bad[0]].tolist()
            )

    def with_domain(self, domain) -> "MetricField":
        return MetricField(self.entries, domain)

    def to_strings(self) -> list[list[str]]:
        return [[ex.to_string(e) for e in row] for row in self.entries]


def _coerce(e, n: int) -> Expr:
    if isinstance(e, Expr):
        return e
    if isinstance(e, str):
        return ex.parse_expression(e, n)
    return ex.const(e)


@dataclass(frozen=True, eq=False)
class FormField:
    """Degree-k form: every increasing multi-index maps to a coefficient tree.

    Degrees above ``n`` are allowed and denote the zero form with an empty
    coefficient set.
    """

    n: int
    k: int
    coeffs: dict = field(default_factory=dict)
    domain: ChartDomain | None = None
    tag: str | None = None

    def __post_init__(self):
        if self.k < 0:
            raise DomainError("negative form degree")
        if self.tag not in TAGS:
            raise DomainError(f"unknown boundary tag {self.tag!r}")
        filled = {}
        for key, val in dict(self.coeffs).items():
            idx = parse_label(key, self.n) if isinstance(key, str) else MultiIndex(key, self.n)
            if idx.degree != self.k:
                raise DomainError(f"index {tuple(idx)} does not have degree {self.k}")
            filled[idx] = _coerce(val, self.n)
        for idx in self.indices:
            filled.setdefault(idx, ex.ZERO)
        object.__setattr__(self, "coeffs", {idx: filled[idx] for idx in self.indices})

    @property
    def indices(self) -> list[MultiIndex]:
        if self.k > self.n:
            return []
        return enumerate_multi_indices(self.n, self.k)

    def __getitem__(self, idx) -> Expr:
        return self.coeffs[MultiIndex(idx, self.n)]

    def exprs(self) -> list[Expr]:
        return [self.coeffs[i] for i in self.indices]

    def values(self, points) -> np.ndarray:
        """Coefficient values, shape ``(N, C(n, k))`` in enumeration order."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.indices:
            return np.zeros((len(pts), 0))
        return ex.evaluate_many(self.exprs(), pts).T

    def replace(self, **changes) -> "FormField":
        kw = dict(n=self.n, k=self.k, coeffs=self.coeffs, domain=self.domain, tag=self.tag)
        kw.update(changes)
        return FormField(**kw)

    def map(self, fn) -> "FormField":
        return self.replace(coeffs={i: fn(i, e) for i, e in self.coeffs.items()})

    def __add__(self, other: "FormField") -> "FormField":
        if (self.n, self.k) != (other.n, other.k):
            raise DomainError("cannot add forms of different type")
        return self.map(lambda i, e: ex.add(e, other.coeffs[i]))

    def scaled(self, factor) -> "FormField":
        f = ex.as_expr(factor)
        return self.map(lambda i, e: ex.mul(f, e))

    @property
    def is_zero(self) -> bool:
        return all(e is ex.ZERO for e in self.coeffs.values())

    def to_dict(self) -> dict:
        return {"degree": self.k, "coeffs": {i.label(): ex.to_string(e) for i, e in self.coeffs.items()}}

    def check_tag(self, points=None, tol: float = 1e-10):
        """Verify the boundary tag on a boundary grid; returns ``(ok, worst_point, worst_error)``.

        ``normal-zero`` in adapted coordinates: every coefficient whose index
        contains ``n`` vanishes on ``{x_n = 0}``.  ``tangential-zero``: every
        coefficient whose index omits ``n`` vanishes there.
        """
        if self.tag is None:
            return True, None, 0.0
        if points is None:
            from .sampling import boundary_grid

            points = boundary_grid(self.domain)
        pts = np.atleast_2d(points)
        want_n = self.tag == "normal-zero"
        sel = [i for i in self.indices if i.contains_n(self.n) == want_n]
        if not sel:
            return True, None, 0.0
        vals = np.abs(ex.evaluate_many([self.coeffs[i] for i in sel], pts))
        flat = int(np.argmax(vals))
        row, col = divmod(flat, vals.shape[1])
        worst = float(vals[row, col])
        return worst <= tol, {"point": pts[col].tolist(), "index": sel[row].label()}, worst


def form(n: int, k: int, coeffs: dict, domain=None, tag=None) -> FormField:
    return FormField(n, k, coeffs, domain, tag)


def zero_form(n: int, k: int, domain=None) -> FormField:
    return FormField(n, k, {}, domain)


# ---------------------------------------------------------------------------
# symbolic operators


def exterior_derivative(w: FormField) -> FormField:
    """``(dw)_{I u j} += (-1)^pos(j) * d_j w_I``; degree ``n`` maps to the empty (n+1)-form."""
    out = {}
    if w.k >= w.n:
        return FormField(w.n, w.k + 1, {}, w.domain)
    terms = {idx: [] for idx in enumerate_multi_indices(w.n, w.k + 1)}
    for idx, coeff in w.coeffs.items():
        if coeff is ex.ZERO:
            continue
        for j in range(1, w.n + 1):
            slot = insert_index(idx, j)
            if slot is None:
                continue
            _, sign = slot
            d = ex.derivative(coeff, j)
            terms[merged(idx, j)].append(d if sign > 0 else ex.neg(d))
    for idx, parts in terms.items():
        out[idx] = ex.total(parts)
    return FormField(w.n, w.k + 1, out, w.domain)


def raised(w: FormField, g: MetricField, idx) -> Expr:
    """``w^I = sum_K det(g^-1[I, K]) w_K``."""
    return ex.total(
        ex.mul(g.inverse_minor(tuple(idx), tuple(K)), c) for K, c in w.coeffs.items() if c is not ex.ZERO
    )


def hodge_star(w: FormField, g: MetricField) -> FormField:
    """``(*w)_J = sqrt(det g) * eps(I, J) * w^I`` with ``I`` the complement of ``J``."""
    n = w.n
    if g.n != n:
        raise DomainError("metric and form dimensions differ")
    if w.k > n:
        raise DomainError(f"degree {w.k} exceeds dimension {n}")
    out = {}
    for I in enumerate_multi_indices(n, w.k):
        J, sign = complement_with_sign(I, n)
        c = ex.mul(g.sqrt_det, raised(w, g, I))
        out[J] = c if sign > 0 else ex.neg(c)
    tag = {"normal-zero": "tangential-zero", "tangential-zero": "normal-zero"}.get(w.tag)
    return FormField(n, n - w.k, out, w.domain, tag)


def codifferential(w: FormField, g: MetricField) -> FormField:
    """``delta w = (-1)^(n(k+1)+1) * d * w``; zero on functions."""
    n, k = w.n, w.k
    if k == 0:
        return FormField(n, 0, {}, w.domain)
    inner = hodge_star(exterior_derivative(hodge_star(w, g)), g)
    sign = -1 if (n * (k + 1) + 1) % 2 else 1
    res = inner.scaled(sign) if sign < 0 else inner
    return FormField(n, k - 1, res.coeffs, w.domain)


# ---------------------------------------------------------------------------
# numeric, pointwise


def _metric_arrays(g: MetricField, pts: np.ndarray):
    gv = g.values(pts)
    det = np.linalg.det(gv)
    bad = np.nonzero(det <= 0.0)[0]
    if len(bad):
        raise MetricDegeneracyError(f"det g <= 0 at {pts[bad[0]].tolist()}", pts[bad[0]].tolist())
    return gv, det, np.linalg.inv(gv)


def compound(mats: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrices (all k x k minors in lexicographic order), shape ``(N, C, C)``."""
    N, n, _ = mats.shape
    subsets = list(combinations(range(n), k))
    out = np.empty((N, len(subsets), len(subsets)))
    if k == 0:
        out[:] = 1.0
        return out
    for a, rows in enumerate(subsets):
        block = mats[:, rows, :]
        for b, cols in enumerate(subsets):
            out[:, a, b] = np.linalg.det(block[:, :, cols])
    return out


def norm_sq_values(vals: np.ndarray, ginv: np.ndarray, k: int) -> np.ndarray:
    """``|w|_g^2 = w^T C_k(g^-1) w`` for coefficient arrays ``(N, C)``."""
    if vals.shape[1] == 0:
        return np.zeros(len(vals))
    comp = compound(ginv, k)
    return np.einsum("ni,nij,nj->n", vals, comp, vals)


def star_values(vals: np.ndarray, gv: np.ndarray, k: int) -> np.ndarray:
    """Numeric Hodge star of coefficient arrays, independent of :func:`hodge_star`."""
    N, n, _ = gv.shape
    ginv = np.linalg.inv(gv)
    raised_vals = np.einsum("nij,nj->ni", compound(ginv, k), vals)
    vol = np.sqrt(np.linalg.det(gv))
    I_list = enumerate_multi_indices(n, k)
    J_list = enumerate_multi_indices(n, n - k)
    pos = {J: a for a, J in enumerate(J_list)}
    out = np.zeros((N, len(J_list)))
    for a, I in enumerate(I_list):
        J, sign = complement_with_sign(I, n)
        out[:, pos[J]] = sign * vol * raised_vals[:, a]
    return out


def fiber_norm_sq(w: FormField, g: MetricField, points):
    """Pointwise ``|w|_g^2``; a float for one point, an array for many."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    single = np.asarray(points).ndim == 1
    _, _, ginv = _metric_arrays(g, pts)
    out = norm_sq_values(w.values(pts), ginv, w.k)
    return float(out[0]) if single else out


def interior_values(v: np.ndarray, vals: np.ndarray, n: int, k: int) -> np.ndarray:
    """Interior product ``i_v w`` on coefficient arrays."""
    if k == 0:
        return np.zeros((len(vals), 0))
    src = {I: a for a, I in enumerate(enumerate_multi_indices(n, k))}
    tgt = enumerate_multi_indices(n, k - 1)
    out = np.zeros((len(vals), len(tgt)))
    for b, Ip in enumerate(tgt):
        for j in range(1, n + 1):
            slot = insert_index(Ip, j)
            if slot is None:
                continue
            out[:, b] += slot[1] * v[:, j - 1] * vals[:, src[merged(Ip, j)]]
    return out


def wedge1_values(c: np.ndarray, vals: np.ndarray, n: int, k: int) -> np.ndarray:
    """``c ^ b`` for a 1-form ``c`` and a (k-1)-form ``b``; result of degree k."""
    src = {I: a for a, I in enumerate(enumerate_multi_indices(n, k - 1))}
    tgt = enumerate_multi_indices(n, k)
    out = np.zeros((len(vals), len(tgt)))
    for a, I in enumerate(tgt):
        for pos, j in enumerate(I):
            out[:, a] += (-1) ** pos * c[:, j - 1] * vals[:, src[I.without(j)]]
    return out


@dataclass
class BoundaryTable:
    """Boundary values of a form's normal and tangential parts."""

    points: np.ndarray
    indices: list
    normal: np.ndarray
    tangential: np.ndarray

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "indices": [i.label() for i in self.indices],
            "normal": self.normal.tolist(),
            "tangential": self.tangential.tolist(),
        }


def _boundary_points(w: FormField, boundary_points):
    if boundary_points is None:
        if w.domain is None or not w.domain.has_interface:
            raise DomainError("no boundary portion {x_n = 0} in the domain")
        from .sampling import boundary_grid

        boundary_points = boundary_grid(w.domain)
    pts = np.atleast_2d(np.asarray(boundary_points, dtype=float))
    if w.domain is not None and not w.domain.has_interface and w.domain.shape != "annulus":
        raise DomainError("no boundary portion in the domain")
    return pts


def boundary_parts(w: FormField, g: MetricField, boundary_points=None, conormal=None) -> BoundaryTable:
    """Split ``w`` at boundary points into ``n(w) = nu_flat ^ i_nu w`` and ``t(w) = w - n(w)``.

    ``conormal`` gives an outward-or-inward boundary covector per point
    (``(N, n)``); by default the boundary is ``{x_n = 0}`` with covector ``dx_n``.
    The unit normal is the g-dual of the normalized covector, so the split is
    the g-orthogonal one for any metric.
    """
    pts = _boundary_points(w, boundary_points)
    n, k = w.n, w.k
    _, _, ginv = _metric_arrays(g, pts)
    if conormal is None:
        c = np.zeros((len(pts), n))
        c[:, -1] = 1.0
    else:
        c = np.atleast_2d(np.asarray(conormal, dtype=float))
    c = c / np.sqrt(np.einsum("ni,nij,nj->n", c, ginv, c))[:, None]
    nu = np.einsum("nij,nj->ni", ginv, c)
    vals = w.values(pts)
    if k == 0:
        normal = np.zeros_like(vals)
    else:
        normal = wedge1_values(c, interior_values(nu, vals, n, k), n, k)
    return BoundaryTable(pts, w.indices, normal, vals - normal)


def normal_part(w: FormField, g: MetricField, boundary_points=None, conormal=None) -> BoundaryTable:
    return boundary_parts(w, g, boundary_points, conormal)


def tangential_restrict(w: FormField) -> FormField:
    """Pullback to ``{x_n = 0}``: keep n-free coefficients, set ``x_n = 0``, drop to dimension n-1."""
    if w.domain is not None and not w.domain.has_interface:
        raise DomainError("no boundary portion {x_n = 0} in the domain")
    n = w.n
    coeffs = {}
    for idx, c in w.coeffs.items():
        if idx.contains_n(n):
            continue
        coeffs[tuple(idx)] = ex.substitute(c, {n: ex.ZERO})
    boundary_domain = None
    if w.domain is not None and n > 1:
        d = w.domain
        if d.shape == "half-ball":
            boundary_domain = ChartDomain(n - 1, "ball", d.radius)
        else:
            boundary_domain = ChartDomain(n - 1, "box", d.radius, d.lower[:-1], d.upper[:-1])
    return FormField(n - 1, w.k, coeffs, boundary_domain)


# ---------------------------------------------------------------------------
# residuals


def worst_index(values: np.ndarray, points: np.ndarray) -> int:
    """Index of the maximum, ties broken by the lexicographically smallest point."""
    vmax = np.max(values)
    ties = np.nonzero(values == vmax)[0]
    if len(ties) == 1:
        return int(ties[0])
    order = np.lexsort(points[ties].T[::-1])
    return int(ties[order[0]])


def _dd_norms(w: FormField, g: MetricField, pts: np.ndarray):
    _, _, ginv = _metric_arrays(g, pts)
    dw = exterior_derivative(w)
    dw_sq = norm_sq_values(dw.values(pts), ginv, w.k + 1) if dw.indices else np.zeros(len(pts))
    delta = codifferential(w, g)
    delta_sq = norm_sq_values(delta.values(pts), ginv, w.k - 1) if w.k else np.zeros(len(pts))
    w_sq = norm_sq_values(w.values(pts), ginv, w.k)
    return delta_sq, dw_sq, w_sq


def structural_inequality_residual(w: FormField, g: MetricField, C: float, points, tol: float = 1e-10):
    """Worst value of ``|delta w|^2 + |dw|^2 - C |w|^2`` over the sample set."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    delta_sq, dw_sq, w_sq = _dd_norms(w, g, pts)
    res = delta_sq + dw_sq - C * w_sq
    i = worst_index(res, pts)
    return Report(
        "structural-inequality",
        pts[i].tolist(),
        float(res[i]),
        tol,
        bool(res[i] <= tol),
        {"C": C},
    )


def fit_structural_constant(w: FormField, g: MetricField, points, floor: float = 1e-13) -> float:
    """Smallest ``C`` making the structural inequality hold on the sample set.

    Returns ``inf`` when some sample has ``|w| = 0`` but a nonzero left side.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    delta_sq, dw_sq, w_sq = _dd_norms(w, g, pts)
    lhs = delta_sq + dw_sq
    live = w_sq > floor
    if np.any(~live & (lhs > floor)):
        return float("inf")
    if not np.any(live):
        return 0.0
    return float(np.max(lhs[live] / w_sq[live]))


def harmonicity_residual(w: FormField, g: MetricField, points) -> tuple[float, float]:
    """``(max |dw|_g, max |delta w|_g)`` over the sample set."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    delta_sq, dw_sq, _ = _dd_norms(w, g, pts)
    return float(np.sqrt(np.max(dw_sq))), float(np.sqrt(np.max(delta_sq)))


def require_adapted(g: MetricField, boundary_points, tol: float = 1e-10) -> None:
    """Raise unless ``g_jn = delta_jn`` on the boundary sample."""
    pts = np.atleast_2d(boundary_points)
    gv = g.values(pts)
    target = np.zeros(g.n)
    target[-1] = 1.0
    err = np.max(np.abs(gv[:, :, -1] - target), axis=1)
    i = worst_index(err, pts)
    if err[i] > tol:
        raise ChartNotAdaptedError(
            f"chart not adapted: |g_jn - delta_jn| = {err[i]:.3e} at {pts[i].tolist()}",
            pts[i].tolist(),
            float(err[i]),
        )
