"""Zero sets of Beltrami fields and harmonic boundary forms.

Contents: curl/div from exterior calculus, a small catalogue of fields with
known zero sets, zero-cloud extraction with shrinking-box refinement,
box-counting dimension, and recovery of the normal jets of a harmonic
field at a boundary point from its tangential data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as iproduct

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from . import expr as ex
from .chart import BoundaryPatch, build_adapted_chart, pullback_form
from .errors import ChartNotAdaptedError, DomainError, NotExactError, TraceMismatchError
from .expr import ChartDomain, Expr
from .forms import (
    FormField,
    MetricField,
    boundary_parts,
    codifferential,
    exterior_derivative,
    fiber_norm_sq,
    harmonicity_residual,
    hodge_star,
    star_values,
)
from .indices import MultiIndex, complement_with_sign, enumerate_multi_indices
from .reports import Report, rows_csv
from .sampling import boundary_grid, grid, sobol

TWO_PI = 2.0 * math.pi

# ---------------------------------------------------------------------------
# musical isomorphisms and curl


def flat(X, g: MetricField, domain=None, tag=None) -> FormField:
    """``X_flat_i = g_ij X^j``."""
    n = g.n
    X = [ex.as_expr(c) for c in X]
    coeffs = {(i,): ex.total(ex.mul(g.g(i, j), X[j - 1]) for j in range(1, n + 1)) for i in range(1, n + 1)}
    return FormField(n, 1, coeffs, domain if domain is not None else g.domain, tag)


def sharp(w: FormField, g: MetricField) -> tuple:
    """``w_sharp^i = g^ij w_j`` for a 1-form."""
    if w.k != 1:
        raise DomainError("sharp is defined here for 1-forms")
    n = w.n
    return tuple(ex.total(ex.mul(g.ginv(i, j), w[(j,)]) for j in range(1, n + 1)) for i in range(1, n + 1))


def musical_and_curl(X, g: MetricField):
    """``(X_flat, curl X, div X)`` with ``curl X = (* d X_flat)_sharp`` and ``div X = -delta X_flat``.

    Raises
    ------
    DomainError
        If the dimension is not 3.
    """
    if g.n != 3 or len(X) != 3:
        raise DomainError("curl needs dimension 3")
    Xf = flat(X, g)
    curl = sharp(hodge_star(exterior_derivative(Xf), g), g)
    div = ex.neg(codifferential(Xf, g)[()])
    return Xf, curl, div


# ---------------------------------------------------------------------------
# catalogue


@dataclass(frozen=True, eq=False)
class CatalogueEntry:
    """A field with known properties.

    ``vector`` holds vector-field components for Beltrami entries (``form``
    is then the flat); harmonic-form entries set ``vector`` to ``None``.
    """

    name: str
    label: str
    domain: ChartDomain
    metric: MetricField
    form: FormField
    vector: tuple | None = None
    expected: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.domain.n

    def fiber_norm(self, points) -> np.ndarray:
        return np.sqrt(np.maximum(fiber_norm_sq(self.form, self.metric, np.atleast_2d(points)), 0.0))

    def standard_grid(self, per_axis: int = 21) -> np.ndarray:
        return grid(self.domain, per_axis)

    def residuals(self, per_axis: int = 21) -> dict:
        """Defining residuals on the ``per_axis**n`` grid (restricted to the domain)."""
        pts = self.standard_grid(per_axis)
        out = {}
        if self.vector is not None:
            lam = self.expected.get("lambda", 1)
            _, curl, div = musical_and_curl(self.vector, self.metric)
            X = ex.evaluate_many(list(self.vector), pts)
            C = ex.evaluate_many(list(curl), pts)
            out["curl-minus-lambda-X"] = float(np.max(np.abs(C - lam * X)))
            out["divergence"] = float(np.max(np.abs(ex.evaluate_many([div], pts))))
        else:
            d_res, delta_res = harmonicity_residual(self.form, self.metric, pts)
            out["closed"] = d_res
            out["coclosed"] = delta_res
        out.update(self.boundary_residuals(per_axis))
        return out

    def boundary_residuals(self, per_axis: int = 21) -> dict:
        tag = self.expected.get("boundary_tag")
        if tag is None:
            return {}
        if self.domain.shape == "annulus":
            return {"normal-part-in-chart": annulus_boundary_split(self)["normal"]}
        out = {}
        faces = [0.0] + ([self.domain.upper[-1]] if self.domain.shape == "box-face" else [])
        base = boundary_grid(self.domain, per_axis)
        for h in faces:
            pts = base.copy()
            pts[:, -1] = h
            parts = boundary_parts(self.form, self.metric, pts)
            key = "normal-part" if tag == "normal-zero" else "tangential-part"
            vals = parts.normal if tag == "normal-zero" else parts.tangential
            out[f"{key}[x{self.n}={h:g}]"] = float(np.max(np.abs(vals)))
        return out

    def check(self, tol: float = 1e-9, per_axis: int = 21) -> list[Report]:
        return [
            Report(f"{self.label}:{k}", None, v, tol, bool(v <= tol), {})
            for k, v in sorted(self.residuals(per_axis).items())
        ]


def annulus_boundary_split(entry: CatalogueEntry, angle: float = 0.0, samples: int = 9) -> dict:
    """Normal/tangential parts of an annulus form on the inner circle, in an adapted chart.

    The chart is built at ``(cos angle, sin angle) * inner`` from the circle
    patch; ``normal`` is the largest normal-part coefficient on the chart
    boundary and ``tangential`` the smallest tangential-part norm.
    """
    r0 = entry.domain.inner
    s = ex.var(1)
    patch = BoundaryPatch(
        (ex.mul(ex.const(Fraction(r0)), ex.cos(s)), ex.mul(ex.const(Fraction(r0)), ex.sin(s))),
        (angle,),
        inward=(math.cos(angle), math.sin(angle)),
    )
    chart = build_adapted_chart(entry.metric, patch, radius=0.25, strict=False)
    pulled = pullback_form(chart, entry.form)
    t = np.linspace(-0.9 * chart.radius, 0.9 * chart.radius, samples)
    pts = np.column_stack([t, np.zeros_like(t)])
    parts = boundary_parts(pulled, chart.metric, pts)
    return {
        "normal": float(np.max(np.abs(parts.normal))),
        "tangential": float(np.min(np.linalg.norm(parts.tangential, axis=1))),
        "chart_radius": chart.radius,
    }


def _P(text: str, n: int) -> Expr:
    return ex.parse_expression(text, n)


def catalogue() -> list[CatalogueEntry]:
    """The five bundled fields, labelled ``a`` to ``e``."""
    out = []

    torus = ChartDomain(3, "torus", 1.0, (0.0,) * 3, (TWO_PI,) * 3)
    g3 = MetricField.euclidean(3, torus)
    X = tuple(_P(s, 3) for s in ("sin(x3)", "sin(x1)+cos(x3)", "cos(x1)"))
    out.append(
        CatalogueEntry(
            "abc-torus",
            "a",
            torus,
            g3,
            flat(X, g3, torus),
            X,
            {
                "lambda": 1,
                "boundary_tag": None,
                "zero_set": "circles {(pi/2, y, pi)} and {(3pi/2, y, 0)}",
                "dimension": 1,
            },
        )
    )

    slab = ChartDomain(3, "box-face", 1.0, (0.0, 0.0, 0.0), (TWO_PI, TWO_PI, math.pi))
    gs = MetricField.euclidean(3, slab)
    Y = tuple(_P(s, 3) for s in ("sin(x3)", "cos(x3)", "0"))
    out.append(
        CatalogueEntry(
            "slab",
            "b",
            slab,
            gs,
            flat(Y, gs, slab, "normal-zero"),
            Y,
            {"lambda": 1, "boundary_tag": "normal-zero", "zero_set": "empty", "dimension": None},
        )
    )

    half_disk = ChartDomain(2, "half-ball", 1.0)
    g2 = MetricField.euclidean(2, half_disk)
    out.append(
        CatalogueEntry(
            "half-disk-quadratic",
            "c",
            half_disk,
            g2,
            FormField(2, 1, {(1,): "2*x1", (2,): "-2*x2"}, half_disk, "normal-zero"),
            None,
            {"boundary_tag": "normal-zero", "zero_set": "{(0, 0)}", "dimension": 0, "potential": "x1^2-x2^2"},
        )
    )

    ann = ChartDomain(2, "annulus", 2.0, inner=1.0)
    ga = MetricField.euclidean(2, ann)
    out.append(
        CatalogueEntry(
            "annulus-angle",
            "d",
            ann,
            ga,
            FormField(2, 1, {(1,): "-x2/(x1^2+x2^2)", (2,): "x1/(x1^2+x2^2)"}, ann, "normal-zero"),
            None,
            {"boundary_tag": "normal-zero", "zero_set": "empty", "dimension": None},
        )
    )

    out.append(
        CatalogueEntry(
            "half-disk-cubic",
            "e",
            half_disk,
            g2,
            FormField(2, 1, {(1,): "3*x1^2-3*x2^2", (2,): "-6*x1*x2"}, half_disk, "normal-zero"),
            None,
            {
                "boundary_tag": "normal-zero",
                "zero_set": "{(0, 0)}",
                "dimension": 0,
                "potential": "x1^3-3*x1*x2^2",
                "order": 2,
            },
        )
    )
    return out


def catalogue_entry(key: str) -> CatalogueEntry:
    """Look up an entry by label (``a``..``e``) or name."""
    for e in catalogue():
        if key in (e.label, e.name):
            return e
    raise DomainError(f"no catalogue entry {key!r}")


def dual_dirichlet_check(entry: CatalogueEntry, per_axis: int = 21, tol: float = 1e-12) -> list[Report]:
    """For a Neumann entry, ``*w`` is Dirichlet-harmonic and ``* t(w) = n(* w)`` on the boundary."""
    w, g = entry.form, entry.metric
    sw = hodge_star(w, g)
    pts = entry.standard_grid(per_axis)
    d_res, delta_res = harmonicity_residual(sw, g, pts)
    bpts = boundary_grid(entry.domain, per_axis)
    ok, where, worst = sw.check_tag(bpts, tol)
    tw = boundary_parts(w, g, bpts).tangential
    n_sw = boundary_parts(sw, g, bpts).normal
    gap = np.max(np.abs(star_values(tw, g.values(bpts), w.k) - n_sw))
    return [
        Report("dual:star-closed", None, d_res, 1e-9, bool(d_res <= 1e-9), {}),
        Report("dual:star-coclosed", None, delta_res, 1e-9, bool(delta_res <= 1e-9), {}),
        Report("dual:tangential-part-vanishes", (where or {}).get("point"), worst, tol, bool(ok), {}),
        Report("dual:star-swaps-parts", None, float(gap), tol, bool(gap <= tol), {}),
    ]


# ---------------------------------------------------------------------------
# zero clouds


@dataclass
class ZeroCloud:
    points: np.ndarray
    norms: np.ndarray
    labels: list
    tol: float
    grid: dict
    domain: ChartDomain | None = None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def interior(self) -> np.ndarray:
        return self.points[[lab == "interior" for lab in self.labels]]

    @property
    def boundary(self) -> np.ndarray:
        return self.points[[lab == "boundary" for lab in self.labels]]

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "grid": self.grid,
            "count": len(self),
            "points": self.points.tolist(),
            "norms": self.norms.tolist(),
            "labels": list(self.labels),
        }

    def to_csv(self) -> str:
        n = self.points.shape[1] if self.points.ndim == 2 else 0
        header = [f"x{i}" for i in range(1, n + 1)] + ["norm", "label"]
        rows = [list(p) + [v, lab] for p, v, lab in zip(self.points.tolist(), self.norms.tolist(), self.labels)]
        return rows_csv(header, rows)


def _is_euclidean(g: MetricField) -> bool:
    n = g.n
    return all(g.g(i, j) is (ex.ONE if i == j else ex.ZERO) for i in range(1, n + 1) for j in range(1, n + 1))


def _form_norm(w: FormField, g: MetricField):
    if _is_euclidean(g):
        exprs = w.exprs()
        return lambda pts: np.sqrt(np.sum(ex.evaluate_many(exprs, np.atleast_2d(pts)) ** 2, axis=0))
    return lambda pts: np.sqrt(np.maximum(fiber_norm_sq(w, g, np.atleast_2d(pts)), 0.0))


def _norm_function(field_, metric):
    if isinstance(field_, CatalogueEntry):
        return _form_norm(field_.form, field_.metric), field_.domain
    if isinstance(field_, FormField):
        g = metric if metric is not None else MetricField.euclidean(field_.n)
        return _form_norm(field_, g), field_.domain
    if callable(field_):
        return field_, None
    raise DomainError("expected a catalogue entry, a FormField or a callable")


def _axes(domain: ChartDomain, per_axis: int):
    n = domain.n
    if domain.shape in ("torus", "box", "box-face"):
        lo, hi = np.array(domain.lower), np.array(domain.upper)
    else:
        lo, hi = np.full(n, -domain.radius), np.full(n, domain.radius)
        if domain.shape == "half-ball":
            lo[-1] = 0.0
    periodic = domain.shape == "torus"
    return [np.linspace(a, b, per_axis, endpoint=not periodic) for a, b in zip(lo, hi)]


def _project(domain: ChartDomain, pts: np.ndarray) -> np.ndarray:
    """Pull points back into the closed domain (torus: no change)."""
    if domain.shape == "torus":
        return pts
    if domain.shape in ("box", "box-face"):
        return np.clip(pts, domain.lower, domain.upper)
    out = pts.copy()
    if domain.shape == "half-ball":
        out[:, -1] = np.maximum(out[:, -1], 0.0)
    rad = np.linalg.norm(out, axis=1)
    lo = domain.inner if domain.shape == "annulus" else 0.0
    target = np.clip(rad, lo, domain.radius)
    scale = np.where(rad > 0, target / np.where(rad > 0, rad, 1.0), 1.0)
    return out * scale[:, None]


def _dedupe(points: np.ndarray, norms: np.ndarray, radius: float):
    if len(points) == 0:
        return points, norms
    order = np.lexsort((*points.T[::-1], norms))
    points, norms = points[order], norms[order]
    tree = cKDTree(points)
    keep = np.ones(len(points), dtype=bool)
    for i in range(len(points)):
        if not keep[i]:
            continue
        for j in tree.query_ball_point(points[i], radius):
            if j > i:
                keep[j] = False
    points, norms = points[keep], norms[keep]
    order = np.lexsort(points.T[::-1])
    return points[order], norms[order]


def zero_cloud(
    field_,
    domain: ChartDomain | None = None,
    per_axis: int = 41,
    tol: float = 1e-9,
    slack: float | None = None,
    metric: MetricField | None = None,
    stencil: int = 5,
    dedupe: float = 1e-7,
    max_iter: int = 80,
    seed: int = 0,
) -> ZeroCloud:
    """Points where the fiber norm vanishes, refined to ``norm <= tol``.

    Grid points whose norm is below ``slack`` (default: twice the largest
    difference between neighbouring grid values) seed a shrinking-box search;
    each step evaluates a ``stencil**n`` lattice on the current box, moves to
    its minimum and halves the box.  Seeds start at a quasi-random offset
    (drawn from ``seed``) inside their grid cell.  Seeds that do not reach
    ``tol`` are dropped and survivors closer than ``dedupe`` are merged.
    """
    norm, own = _norm_function(field_, metric)
    domain = domain if domain is not None else own
    if domain is None:
        raise DomainError("zero_cloud needs a domain")
    n = domain.n
    axes = _axes(domain, per_axis)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    flat_pts = mesh.reshape(-1, n)
    inside = domain.contains(flat_pts)
    vals = np.full(len(flat_pts), np.nan)
    vals[inside] = norm(flat_pts[inside])
    cube = vals.reshape((per_axis,) * n)
    if slack is None:
        diffs = [np.abs(np.diff(cube, axis=a)) for a in range(n)]
        biggest = max((np.nanmax(d) if np.any(np.isfinite(d)) else 0.0) for d in diffs)
        slack = 2.0 * float(biggest)
    seeds = flat_pts[inside & (vals <= max(slack, tol))]
    spacing = max(float(a[1] - a[0]) for a in axes)
    grid_spec = {"per_axis": per_axis, "slack": slack, "seeds": int(len(seeds)), "stencil": stencil}
    if len(seeds) == 0:
        return ZeroCloud(np.zeros((0, n)), np.zeros(0), [], tol, grid_spec, domain)

    # deterministic jitter inside the seed's grid cell, so seeds sharing a
    # grid line along a zero curve converge to distinct points
    jitter = sobol(n, len(seeds), seed) - 0.5
    centres = _project(domain, seeds + spacing * jitter[: len(seeds)])
    offsets = np.array(list(iproduct(np.linspace(-1.0, 1.0, stencil), repeat=n)))
    best = norm(centres)
    h = np.full(len(centres), spacing)
    active = np.arange(len(centres))
    for _ in range(max_iter):
        active = active[(best[active] > 1e-6 * tol) & (h[active] > 1e-14 * (1.0 + spacing))]
        if len(active) == 0:
            break
        c = centres[active]
        trial = _project(domain, (c[:, None, :] + h[active, None, None] * offsets[None]).reshape(-1, n))
        tv = norm(trial).reshape(len(active), len(offsets))
        idx = np.argmin(tv, axis=1)
        rows = np.arange(len(active))
        cand = trial.reshape(len(active), len(offsets), n)[rows, idx]
        cv = tv[rows, idx]
        better = cv <= best[active]
        centres[active[better]] = cand[better]
        best[active[better]] = cv[better]
        h[active] *= 0.5
    ok = best <= tol
    pts, nv = centres[ok], best[ok]
    if domain.shape == "torus":
        period = np.array(domain.upper) - np.array(domain.lower)
        pts = np.array(domain.lower) + np.mod(pts - np.array(domain.lower), period)
        pts = np.where(pts > np.array(domain.upper) - 1e-7, pts - period, pts)
    pts, nv = _dedupe(pts, nv, dedupe)
    on_b = domain.on_boundary(pts, tol=1e-7) if len(pts) else np.zeros(0, dtype=bool)
    labels = ["boundary" if b else "interior" for b in np.atleast_1d(on_b)]
    return ZeroCloud(pts, nv, labels, tol, grid_spec, domain)


def verify_cloud(cloud: ZeroCloud, field_, metric=None) -> Report:
    """Re-evaluate every cloud point; passes when all norms are at most the cloud tolerance."""
    if len(cloud) == 0:
        return Report("zero-cloud-reevaluation", None, 0.0, cloud.tol, True, {"count": 0})
    norm, _ = _norm_function(field_, metric)
    v = norm(cloud.points)
    i = int(np.argmax(v))
    return Report("zero-cloud-reevaluation", cloud.points[i].tolist(), float(v[i]), cloud.tol, bool(v[i] <= cloud.tol), {"count": len(cloud)})


# ---------------------------------------------------------------------------
# box counting


@dataclass
class BoxCountReport:
    scales: list
    counts: list
    dimension: float | None
    band: float | None
    verdict: str

    def to_dict(self) -> dict:
        return {
            "scales": self.scales,
            "counts": self.counts,
            "dimension": self.dimension,
            "band": self.band,
            "verdict": self.verdict,
        }

    def to_csv(self) -> str:
        return rows_csv(("scale", "count"), list(zip(self.scales, self.counts)))


def default_scales(points: np.ndarray, count: int = 6) -> list:
    """Dyadic scales ``eps_min * 2**j``, ``j = count-1, ..., 0``.

    ``eps_min`` is the larger of ``extent / 2**(count+1)`` and twice the
    median nearest-neighbour distance, so the smallest boxes do not resolve
    the sampling gaps of the cloud.  Dyadic scales with a common anchor give
    nested boxes, hence counts monotone in the scale.
    """
    extent = float(np.max(np.ptp(points, axis=0))) if len(points) else 0.0
    if extent == 0.0:
        return [2.0 ** -j for j in range(count)]
    spacing = 0.0
    if len(points) > 1:
        d, _ = cKDTree(points).query(points, k=2)
        spacing = float(np.median(d[:, 1]))
    low = max(extent / 2 ** (count + 1), 2.0 * spacing)
    return [low * 2 ** (count - 1 - j) for j in range(count)]


def box_counts(points: np.ndarray, scales) -> list:
    anchor = points.min(axis=0)
    out = []
    for eps in scales:
        cells = np.floor((points - anchor) / eps).astype(np.int64)
        out.append(int(len(np.unique(cells, axis=0))))
    return out


def box_dimension(cloud, scales=None) -> BoxCountReport:
    """Least-squares slope of ``log N(eps)`` against ``log(1/eps)``.

    Raises
    ------
    DomainError
        If fewer than 4 scales are given or they span less than 1.5 decades.
    """
    pts = cloud.points if isinstance(cloud, ZeroCloud) else np.atleast_2d(np.asarray(cloud, dtype=float))
    if len(pts) == 0 or pts.size == 0:
        return BoxCountReport([], [], None, None, "dimension undefined (empty)")
    scales = default_scales(pts) if scales is None else sorted((float(s) for s in scales), reverse=True)
    if len(scales) < 4:
        raise DomainError("box counting needs at least 4 scales")
    if math.log10(scales[0] / scales[-1]) < 1.5 - 1e-9:
        raise DomainError("box-counting scales must span at least 1.5 decades")
    counts = box_counts(pts, scales)
    x = np.log(1.0 / np.asarray(scales))
    y = np.log(np.asarray(counts, dtype=float))
    if np.all(y == y[0]):
        return BoxCountReport(list(scales), counts, 0.0, 0.0, "fitted")
    fit = stats.linregress(x, y)
    band = float(stats.t.ppf(0.975, len(x) - 2) * fit.stderr)
    return BoxCountReport(list(scales), counts, max(0.0, float(fit.slope)), band, "fitted")


# ---------------------------------------------------------------------------
# normal jets at a boundary point

GIVEN = "given-tangential"
VIA_CODIFF = "recovered-via-codifferential"
VIA_CLOSED = "recovered-via-closedness"


def _alphas(n: int, order: int):
    """Multi-indices of total order ``order`` in ``n`` variables, lexicographically descending."""
    if n == 0:
        return [()] if order == 0 else []
    out = []
    for first in range(order, -1, -1):
        out += [(first,) + rest for rest in _alphas(n - 1, order - first)]
    return out


def _up_to(n: int, order: int):
    return [a for m in range(order + 1) for a in _alphas(n, m)]


@dataclass
class JetTable:
    point: tuple
    max_order: int
    n: int
    k: int
    values: dict
    provenance: dict
    exact: bool

    def __getitem__(self, key):
        I, alpha = key
        return self.values[(tuple(I), tuple(alpha))]

    def is_zero(self, v) -> bool:
        return v == 0 if self.exact else abs(v) <= 1e-9

    def first_nonvanishing(self):
        """``(order, index, alpha, value)`` of the first nonzero entry, or ``None``.

        Entries are scanned by total order, then normal order, then index.
        """
        for m in range(self.max_order + 1):
            keys = sorted(
                (k for k in self.values if sum(k[1]) == m),
                key=lambda k: (k[1][-1], k[0], tuple(-a for a in k[1])),
            )
            for key in keys:
                if not self.is_zero(self.values[key]):
                    return m, key[0], key[1], self.values[key]
        return None

    def to_dict(self) -> dict:
        rows = []
        for (I, alpha), v in sorted(self.values.items(), key=lambda kv: (sum(kv[0][1]), kv[0][1][-1], kv[0][0], kv[0][1])):
            rows.append(
                {
                    "index": MultiIndex(I).label(),
                    "alpha": list(alpha),
                    "value": str(v) if self.exact else float(v),
                    "provenance": self.provenance[(I, alpha)],
                }
            )
        return {"point": list(self.point), "max_order": self.max_order, "exact": self.exact, "entries": rows}


class _Values:
    """Point evaluation, rational when possible."""

    def __init__(self, point, exact: bool):
        self.exact = exact
        self.point = [Fraction(v) for v in point] if exact else [float(v) for v in point]

    def __call__(self, e: Expr):
        if self.exact:
            return ex.evaluate_exact(e, self.point)
        return float(ex.evaluate_expr(e, np.asarray(self.point, dtype=float)))


def _solve(A, b):
    """Gaussian elimination on small dense systems (Fractions or floats)."""
    size = len(b)
    M = [list(row) + [rhs] for row, rhs in zip(A, b)]
    for c in range(size):
        piv = max(range(c, size), key=lambda r: abs(M[r][c]))
        if M[piv][c] == 0:
            raise ChartNotAdaptedError("normal-jet system is singular at the base point", None, None)
        M[c], M[piv] = M[piv], M[c]
        for r in range(size):
            if r != c and M[r][c] != 0:
                f = M[r][c] / M[c][c]
                M[r] = [a - f * bb for a, bb in zip(M[r], M[c])]
    return [M[r][size] / M[r][r] for r in range(size)]


def _binom(alpha, beta) -> int:
    out = 1
    for a, b in zip(alpha, beta):
        out *= math.comb(a, b)
    return out


def _below(alpha):
    return iproduct(*(range(a + 1) for a in alpha))


def _require_jet_inputs(gamma: FormField, g: MetricField, p: np.ndarray, M: int, tol: float):
    if M < 0:
        raise DomainError("maximal order must be nonnegative")
    if gamma.tag is None:
        raise DomainError("boundary tag missing: jet recovery needs a normal-zero form")
    if gamma.tag != "normal-zero":
        raise DomainError("jet recovery expects the normal-zero boundary tag")
    if g.n != gamma.n or len(p) != gamma.n:
        raise DomainError("dimension mismatch")
    if abs(p[-1]) > 0:
        raise DomainError("base point must lie on {x_n = 0}")
    from .forms import require_adapted

    err = float(np.max(np.abs(g.values(p[None])[0] - np.eye(g.n))))
    if err > tol:
        raise ChartNotAdaptedError(f"metric is not the identity at the base point (error {err:.3e})", p.tolist(), err)
    dom = gamma.domain if gamma.domain is not None and gamma.domain.has_interface else ChartDomain(gamma.n, "half-ball", 0.5)
    bpts = boundary_grid(dom, 11)
    require_adapted(g, bpts, tol)
    ok, where, worst = gamma.check_tag(bpts, tol)
    if not ok:
        raise TraceMismatchError(
            f"normal part does not vanish on the boundary (|w_{where['index']}| = {worst:.3e})",
            where["point"],
            worst,
            {"index": where["index"]},
        )


def normal_jet_recovery(gamma: FormField, g: MetricField, p=None, M: int = 3, tol: float = 1e-10) -> JetTable:
    """Rebuild all derivatives of order ``<= M`` at a boundary point from boundary data.

    Layer 0 (no normal derivative) is read from the pullback of ``gamma``
    to the boundary and from ``n(gamma) = 0``.  Layer ``m+1`` first takes the
    n-containing coefficients from ``d * gamma = 0`` (by increasing
    tangential order, so lower-order terms of the same layer are already
    known), then the n-free ones from ``d gamma = 0``.  Only the table and
    the metric enter the recursion; ``gamma`` itself is used for layer 0 only.

    Arithmetic is rational when every needed value is rational, otherwise
    floating point with a ``1e-9`` vanishing threshold.
    """
    n, k = gamma.n, gamma.k
    p = np.zeros(n) if p is None else np.asarray(p, dtype=float)
    _require_jet_inputs(gamma, g, p, M, tol)
    try:
        return _recover(gamma, g, p, M, exact=True)
    except NotExactError:
        return _recover(gamma, g, p, M, exact=False)


def _recover(gamma, g, p, M, exact: bool) -> JetTable:
    n, k = gamma.n, gamma.k
    val = _Values(p, exact)
    zero = Fraction(0) if exact else 0.0
    is_zero = (lambda v: v == 0) if exact else (lambda v: abs(v) <= 1e-9)
    T, prov = {}, {}
    all_I = [tuple(I) for I in enumerate_multi_indices(n, k)] if k <= n else []
    n_free = [I for I in all_I if n not in I]
    n_cont = [I for I in all_I if n in I]

    # layer 0
    tang = {}
    for I in n_free:
        tang[I] = ex.substitute(gamma.coeffs[MultiIndex(I, n)], {n: ex.ZERO})
    for ah in _up_to(n - 1, M):
        alpha = ah + (0,)
        for I in n_free:
            T[(I, alpha)] = val(ex.multi_derivative(tang[I], ah))
            prov[(I, alpha)] = GIVEN
        for I in n_cont:
            T[(I, alpha)] = zero
            prov[(I, alpha)] = GIVEN

    # coefficients of the star: (*gamma)_J = sum_K c[J, K] gamma_K
    star_J = [tuple(J) for J in enumerate_multi_indices(n, n - k)]
    c_expr = {}
    for J in star_J:
        Jc, sign = complement_with_sign(MultiIndex(J, n), n)
        for K in all_I:
            e = ex.mul(g.sqrt_det, g.inverse_minor(tuple(Jc), K))
            c_expr[(J, K)] = e if sign > 0 else ex.neg(e)
    c_deriv = {}

    def cval(J, K, delta):
        key = (J, K, delta)
        if key not in c_deriv:
            c_deriv[key] = val(ex.multi_derivative(c_expr[(J, K)], delta))
        return c_deriv[key]

    def star_jet(J, beta, skip=None):
        """``d^beta (*gamma)_J`` by Leibniz; ``skip(K, b)`` excludes table entries."""
        total = zero
        for b in _below(beta):
            b = tuple(b)
            delta = tuple(x - y for x, y in zip(beta, b))
            for K in all_I:
                if skip is not None and skip(K, b):
                    continue
                c = cval(J, K, delta)
                if c != 0:
                    total += _binom(beta, b) * c * T[(K, b)]
        return total

    for m in range(M):
        layer = m + 1
        for order in range(M - layer + 1):
            for ah in _alphas(n - 1, order):
                alpha = ah + (layer,)
                # n-containing unknowns from d * gamma = 0
                if n_cont:
                    rows, rhs = [], []
                    for J in star_J:
                        if n in J:
                            continue
                        L = J + (n,)
                        acc = zero
                        for pos, j in enumerate(J):
                            beta = tuple(a + (1 if i + 1 == j else 0) for i, a in enumerate(ah)) + (m,)
                            rest = tuple(x for x in L if x != j)
                            acc += (-1) ** pos * star_jet(rest, beta)
                        target = -((-1) ** (n - k)) * acc

                        def unknown(K, b, alpha=alpha):
                            return b[-1] == layer and (K in n_cont and b == alpha or K in n_free)

                        for K in n_free:
                            for b in _below(alpha):
                                b = tuple(b)
                                if b[-1] != layer:
                                    continue
                                c = cval(J, K, tuple(x - y for x, y in zip(alpha, b)))
                                if not is_zero(c):
                                    raise ChartNotAdaptedError(
                                        "n-free coefficients enter the normal relation: "
                                        "g^{nj} is not constant along the boundary",
                                        p.tolist(),
                                        float(abs(c)),
                                    )
                        known = star_jet(J, alpha, skip=unknown)
                        rows.append([cval(J, K, (0,) * n) for K in n_cont])
                        rhs.append(target - known)
                    for K, v in zip(n_cont, _solve(rows, rhs)):
                        T[(K, alpha)] = v
                        prov[(K, alpha)] = VIA_CODIFF
        # n-free unknowns from d gamma = 0
        for order in range(M - layer + 1):
            for ah in _alphas(n - 1, order):
                alpha = ah + (layer,)
                for I in n_free:
                    acc = zero
                    for pos, j in enumerate(I):
                        beta = tuple(a + (1 if i + 1 == j else 0) for i, a in enumerate(ah)) + (m,)
                        src = tuple(x for x in I if x != j) + (n,)
                        acc += (-1) ** pos * T[(src, beta)]
                    T[(I, alpha)] = -((-1) ** k) * acc
                    prov[(I, alpha)] = VIA_CLOSED
    return JetTable(tuple(p.tolist()), M, n, k, T, prov, exact)


def direct_jets(gamma: FormField, p=None, M: int = 3) -> dict:
    """Oracle: ``d^alpha gamma_I (p)`` by symbolic differentiation of every coefficient."""
    n = gamma.n
    p = np.zeros(n) if p is None else np.asarray(p, dtype=float)
    try:
        val = _Values(p, True)
        return {
            (tuple(I), alpha): val(ex.multi_derivative(c, alpha))
            for I, c in gamma.coeffs.items()
            for alpha in _up_to(n, M)
        }
    except NotExactError:
        val = _Values(p, False)
        return {
            (tuple(I), alpha): val(ex.multi_derivative(c, alpha))
            for I, c in gamma.coeffs.items()
            for alpha in _up_to(n, M)
        }


def infinite_order_probe(gamma: FormField, g: MetricField, p=None, M: int = 3) -> dict:
    """Order of the first nonvanishing jet entry, or the all-vanish verdict."""
    table = normal_jet_recovery(gamma, g, p, M)
    first = table.first_nonvanishing()
    if first is None:
        return {
            "verdict": "all orders vanish",
            "max_order": M,
            "note": f"every derivative of order <= {M} vanishes; an infinite-order zero forces gamma = 0",
            "table": table,
        }
    order, I, alpha, v = first
    return {
        "verdict": "finite order",
        "order": order,
        "witness": {
            "index": MultiIndex(I).label(),
            "alpha": list(alpha),
            "value": str(v) if table.exact else float(v),
            "provenance": table.provenance[(I, alpha)],
        },
        "max_order": M,
        "table": table,
    }
