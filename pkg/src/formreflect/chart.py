"""Boundary-adapted coordinate charts.

The chart is the straight normal flowout

    Phi(y', t) = sigma(rho(y')) + t * nu(rho(y'))

of a boundary patch ``sigma``, where ``nu`` is the inward g-unit normal and
``rho`` is the affine reparametrization that makes the tangent frame
g-orthonormal at the base point.  On ``{t = 0}`` this gives
``g(d_t, d_t) = 1`` and ``g(d_t, d_a) = 0``; at the origin the whole pulled
metric is the identity.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import expr as ex
from .errors import DomainError, MetricDegeneracyError, ShrinkRadiusError
from .expr import ChartDomain
from .forms import FormField, MetricField, symbolic_det
from .indices import enumerate_multi_indices
from .sampling import boundary_grid, grid


@dataclass(frozen=True, eq=False)
class CoordinateMap:
    """Map from chart coordinates ``x1..xn`` to ambient coordinates."""

    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(ex.as_expr(c) for c in self.components))

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def jacobian(self) -> tuple:
        """``J[i][a] = d Phi^i / d x_a`` (0-based)."""
        cache = self.__dict__.get("_jac")
        if cache is None:
            cache = tuple(tuple(ex.derivative(c, a) for a in range(1, self.n + 1)) for c in self.components)
            self.__dict__["_jac"] = cache
        return cache

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return ex.evaluate_many(list(self.components), pts).T

    def jacobian_values(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        flat = ex.evaluate_many([e for row in self.jacobian for e in row], pts)
        return flat.T.reshape(len(pts), self.n, self.n)

    def compose(self, inner: "CoordinateMap") -> "CoordinateMap":
        """``self o inner``."""
        mapping = {i + 1: c for i, c in enumerate(inner.components)}
        return CoordinateMap(tuple(ex.substitute(c, mapping) for c in self.components))

    def to_strings(self) -> list[str]:
        return [ex.to_string(c) for c in self.components]


def identity_map(n: int) -> CoordinateMap:
    return CoordinateMap(tuple(ex.var(i) for i in range(1, n + 1)))


def linear_map(A, b=None) -> CoordinateMap:
    """``x -> A x + b`` with exact rational copies of the float entries."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    comps = []
    for i in range(n):
        terms = [ex.const(Fraction(float(b[i])))]
        terms += [ex.mul(ex.const(Fraction(float(A[i, a]))), ex.var(a + 1)) for a in range(A.shape[1])]
        comps.append(ex.total(terms))
    return CoordinateMap(tuple(comps))


def pullback_metric(phi, g: MetricField, domain: ChartDomain | None = None) -> MetricField:
    """``(Phi* g)_ab = sum_ij g_ij(Phi) dPhi^i/dx_a dPhi^j/dx_b``."""
    phi = phi.map if isinstance(phi, AdaptedChart) else phi
    n = phi.n
    if g.n != n:
        raise DomainError("map and metric dimensions differ")
    mapping = {i + 1: c for i, c in enumerate(phi.components)}
    gphi = [[ex.substitute(g.entries[i][j], mapping) for j in range(n)] for i in range(n)]
    J = phi.jacobian
    entries = [[None] * n for _ in range(n)]
    for a in range(n):
        for b in range(a, n):
            terms = []
            for i in range(n):
                for j in range(n):
                    if gphi[i][j] is ex.ZERO or J[i][a] is ex.ZERO or J[j][b] is ex.ZERO:
                        continue
                    terms.append(ex.mul(gphi[i][j], ex.mul(J[i][a], J[j][b])))
            entries[a][b] = entries[b][a] = ex.total(terms)
    return MetricField(tuple(tuple(r) for r in entries), domain)


def pullback_form(phi, w: FormField) -> FormField:
    """``(Phi* w)_J = sum_I w_I(Phi) det(dPhi^I / dx^J)``."""
    domain = phi.domain if isinstance(phi, AdaptedChart) else None
    phi = phi.map if isinstance(phi, AdaptedChart) else phi
    n, k = w.n, w.k
    if phi.n != n:
        raise DomainError("map and form dimensions differ")
    mapping = {i + 1: c for i, c in enumerate(phi.components)}
    J = phi.jacobian
    out = {}
    for Jidx in enumerate_multi_indices(n, k):
        terms = []
        for Iidx, c in w.coeffs.items():
            if c is ex.ZERO:
                continue
            minor = symbolic_det([[J[i - 1][a - 1] for a in Jidx] for i in Iidx])
            terms.append(ex.mul(ex.substitute(c, mapping), minor))
        out[Jidx] = ex.total(terms)
    return FormField(n, k, out, domain, w.tag)


@dataclass(frozen=True, eq=False)
class BoundaryPatch:
    """Parametrized boundary piece ``sigma`` of ``n-1`` parameters (written x1..x_{n-1}).

    ``inward`` is an ambient vector pointing into the domain at the base
    point; it fixes the orientation of the normal (default ``e_n``).
    """

    components: tuple
    base: tuple
    inward: tuple | None = None

    def __post_init__(self):
        comps = tuple(ex.as_expr(c) for c in self.components)
        n = len(comps)
        for c in comps:
            if any(v >= n for v in c.variables()):
                raise DomainError("boundary patch may only use parameters x1..x_{n-1}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "base", tuple(float(b) for b in self.base))
        if len(self.base) != n - 1:
            raise DomainError("base parameter must have n-1 entries")

    @classmethod
    def from_strings(cls, comps, base, inward=None) -> "BoundaryPatch":
        n = len(comps)
        return cls(tuple(ex.parse_expression(c, n) for c in comps), tuple(base), inward)

    @classmethod
    def flat(cls, n: int, base=None) -> "BoundaryPatch":
        comps = tuple(ex.var(i) for i in range(1, n)) + (ex.ZERO,)
        return cls(comps, tuple(base) if base is not None else (0.0,) * (n - 1))

    @property
    def n(self) -> int:
        return len(self.components)

    def _pad(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        return np.hstack([q, np.zeros((len(q), 1))])

    def point(self, q) -> np.ndarray:
        return ex.evaluate_many(list(self.components), self._pad(q)).T

    def tangents(self, q) -> np.ndarray:
        """``(N, n, n-1)`` array of ``d sigma / d q_j``."""
        exprs = [ex.derivative(c, j) for c in self.components for j in range(1, self.n)]
        vals = ex.evaluate_many(exprs, self._pad(q)).T
        return vals.reshape(-1, self.n, self.n - 1)


def _conormal_numeric(T: np.ndarray) -> np.ndarray:
    """Covector annihilating the columns of ``T`` (``n x (n-1)``), by signed cofactors."""
    n = T.shape[0]
    return np.array([(-1) ** i * np.linalg.det(np.delete(T, i, axis=0)) for i in range(n)])


def inward_unit_normal(g: MetricField, patch: BoundaryPatch, q) -> np.ndarray:
    """Inward g-unit normal at ``sigma(q)``: ``g(nu, d_j sigma) = 0``, ``g(nu, nu) = 1``."""
    T = patch.tangents(q)[0]
    if np.linalg.matrix_rank(T) < patch.n - 1:
        raise DomainError("boundary patch is not immersive at this parameter")
    p = patch.point(q)
    G = g.values(p)[0]
    covector = _conormal_numeric(T)
    nu = np.linalg.solve(G, covector)
    nu /= np.sqrt(nu @ G @ nu)
    hint = np.eye(patch.n)[-1] if patch.inward is None else np.asarray(patch.inward, dtype=float)
    if covector @ hint < 0:
        nu = -nu
    return nu


@dataclass(frozen=True, eq=False)
class AdaptedChart:
    map: CoordinateMap
    metric: MetricField
    ambient_metric: MetricField
    base_point: tuple
    radius: float
    patch: BoundaryPatch

    @property
    def n(self) -> int:
        return self.map.n

    @property
    def domain(self) -> ChartDomain:
        return ChartDomain(self.n, "half-ball", self.radius)

    def check_properties(self, per_axis: int = 21) -> dict:
        """Errors of the three chart properties: identity metric at 0, ``Phi(0) = p``, normal row on the boundary."""
        n = self.n
        origin = np.zeros((1, n))
        g0 = self.metric.values(origin)[0]
        err1 = float(np.max(np.abs(g0 - np.eye(n))))
        err2 = float(np.max(np.abs(self.map(origin)[0] - np.asarray(self.base_point))))
        bpts = boundary_grid(self.domain, per_axis)
        gb = self.metric.values(bpts)
        target = np.zeros(n)
        target[-1] = 1.0
        err3 = np.max(np.abs(gb[:, :, -1] - target), axis=1)
        worst = int(np.argmax(err3))
        return {
            "identity-at-base": err1,
            "base-to-origin": err2,
            "normal-row-on-boundary": float(err3[worst]),
            "normal-row-worst-point": bpts[worst].tolist(),
            "boundary-samples": len(bpts),
        }


def _orthonormal_reparam(T0: np.ndarray, G0: np.ndarray) -> np.ndarray:
    """Matrix ``A`` with ``(T0 A)^T G0 (T0 A) = I`` (Gram-Schmidt in parameter order)."""
    m = T0.shape[1]
    A = np.zeros((m, m))
    for j in range(m):
        coeff = np.zeros(m)
        coeff[j] = 1.0
        v = T0[:, j].copy()
        for i in range(j):
            e = T0 @ A[:, i]
            proj = e @ G0 @ T0[:, j]
            v -= proj * e
            coeff -= proj * A[:, i]
        length = np.sqrt(v @ G0 @ v)
        if length < 1e-14:
            raise DomainError("boundary tangents are linearly dependent at the base point")
        A[:, j] = coeff / length
    return A


def _chart_valid(phi: CoordinateMap, pulled: MetricField, r: float, per_axis: int = 7) -> bool:
    n = phi.n
    pts = grid(ChartDomain(n, "half-ball", r), per_axis)
    pts = np.vstack([np.zeros((1, n)), pts])
    try:
        jac = np.linalg.det(phi.jacobian_values(pts))
        minors = pulled.leading_minors(pts)
    except (ArithmeticError, ValueError):
        return False
    if not np.all(np.isfinite(jac)) or np.any(jac * np.sign(jac[0]) <= 1e-8 * abs(jac[0])):
        return False
    if np.any(minors <= 0.0):
        return False
    image = phi(pts)
    diff_img = np.linalg.norm(image[:, None, :] - image[None, :, :], axis=-1)
    diff_pre = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    off = diff_pre > 0
    smin = np.min(np.linalg.svd(phi.jacobian_values(pts[:1])[0], compute_uv=False))
    return bool(np.all(diff_img[off] >= 1e-3 * smin * diff_pre[off]))


def build_adapted_chart(
    g: MetricField, patch: BoundaryPatch, radius: float = 0.5, strict: bool = True
) -> AdaptedChart:
    """Construct the adapted chart around ``sigma(base)``.

    With ``strict`` an invalid radius raises :class:`ShrinkRadiusError`
    carrying the largest valid radius found by 8 bisection steps; otherwise
    the radius is shrunk to that value.
    """
    n = patch.n
    if g.n != n:
        raise DomainError("metric and patch dimensions differ")
    q0 = np.asarray(patch.base)
    p = patch.point(q0)[0]
    T0 = patch.tangents(q0)[0]
    if np.linalg.matrix_rank(T0) < n - 1:
        raise DomainError("boundary patch is not immersive at the base parameter")
    G0 = g.values(p)[0]
    if np.any(np.linalg.eigvalsh(G0) <= 0):
        raise MetricDegeneracyError("metric not positive definite at the base point", p.tolist())
    A = _orthonormal_reparam(T0, G0)

    rho = {
        j + 1: ex.total(
            [ex.const(Fraction(float(q0[j])))]
            + [ex.mul(ex.const(Fraction(float(A[j, a]))), ex.var(a + 1)) for a in range(n - 1)]
        )
        for j in range(n - 1)
    }
    s_rho = [ex.substitute(c, rho) for c in patch.components]
    tangents = [[ex.derivative(s_rho[i], a) for a in range(1, n)] for i in range(n)]
    conormal = []
    for i in range(n):
        minor = symbolic_det([tangents[r] for r in range(n) if r != i]) if n > 1 else ex.ONE
        conormal.append(minor if i % 2 == 0 else ex.neg(minor))

    hint = np.eye(n)[-1] if patch.inward is None else np.asarray(patch.inward, dtype=float)
    conormal0 = ex.evaluate_many(conormal, np.zeros((1, n))).T[0]
    orient = 1 if conormal0 @ hint >= 0 else -1

    on_boundary = {i + 1: s for i, s in enumerate(s_rho)}
    ginv = [[ex.substitute(g.inverse[i][j], on_boundary) for j in range(n)] for i in range(n)]
    raised = [ex.total(ex.mul(ginv[i][j], conormal[j]) for j in range(n)) for i in range(n)]
    length = ex.sqrt(ex.total(ex.mul(conormal[i], raised[i]) for i in range(n)))
    nu = [ex.div(raised[i] if orient > 0 else ex.neg(raised[i]), length) for i in range(n)]
    t = ex.var(n)
    phi = CoordinateMap(tuple(ex.add(s_rho[i], ex.mul(t, nu[i])) for i in range(n)))

    pulled = pullback_metric(phi, g)
    r = float(radius)
    if not _chart_valid(phi, pulled, r):
        lo, hi = 0.0, r
        for _ in range(8):
            mid = 0.5 * (lo + hi)
            if _chart_valid(phi, pulled, mid):
                lo = mid
            else:
                hi = mid
        if strict or lo == 0.0:
            raise ShrinkRadiusError(f"chart radius {r} too large; try {lo:.6g}", lo)
        r = lo
    domain = ChartDomain(n, "half-ball", r)
    return AdaptedChart(phi, pulled.with_domain(domain), g, tuple(p.tolist()), r, patch)
