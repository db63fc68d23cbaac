"""Sign-flip reflection of metrics and forms across ``{x_n = 0}``.

Metric entries are reflected evenly except the mixed ``(j, n)`` entries,
which pick up ``sgn(x_n)``; form coefficients pick up ``sgn(x_n)`` exactly
when their index contains ``n``.  Both refuse inputs whose extension would
jump across the interface: a metric without ``g_jn = delta_jn`` on the
boundary, or a form whose n-containing coefficients have nonzero trace.

Every ``verify_*`` function compares the reflected objects (evaluated on
the lower half) against independent evaluations of the source at mirrored
upper points, and returns :class:`~formreflect.reports.Report` objects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import DomainError, TraceMismatchError
from .forms import (
    FormField,
    MetricField,
    codifferential,
    exterior_derivative,
    hodge_star,
    norm_sq_values,
    require_adapted,
    worst_index,
)
from .reports import Report
from .sampling import ball_volume, boundary_grid, mirrored_pairs, random_points, sobol, unit_ball_nodes


@dataclass(frozen=True, eq=False)
class ReflectedMetric:
    metric: MetricField
    source: MetricField

    @property
    def n(self) -> int:
        return self.metric.n


@dataclass(frozen=True, eq=False)
class ReflectedForm:
    form: FormField
    source: FormField
    via_star: bool = False

    @property
    def n(self) -> int:
        return self.form.n


def _flip_metric(i: int, j: int, n: int) -> bool:
    return (i == n) != (j == n)


def reflect_metric(g: MetricField, boundary_points=None, tol: float = 1e-10) -> ReflectedMetric:
    """Extend an adapted half-ball metric to the full ball."""
    if g.domain is None or not g.domain.has_interface:
        raise DomainError("metric domain has no reflection interface")
    n = g.n
    if boundary_points is None:
        boundary_points = boundary_grid(g.domain)
    require_adapted(g, boundary_points, tol)
    entries = tuple(
        tuple(ex.reflect_expr(g.entries[i][j], n, _flip_metric(i + 1, j + 1, n)) for j in range(n))
        for i in range(n)
    )
    return ReflectedMetric(MetricField(entries, g.domain.reflected()), g)


def _check_normal_trace(w: FormField, boundary_points, tol: float):
    n = w.n
    sel = [I for I in w.indices if I.contains_n(n)]
    if not sel:
        return
    pts = np.atleast_2d(boundary_points)
    vals = np.abs(ex.evaluate_many([w.coeffs[I] for I in sel], pts))
    row, col = divmod(int(np.argmax(vals)), vals.shape[1])
    if vals[row, col] > tol:
        raise TraceMismatchError(
            f"normal part does not vanish: |w_{sel[row].label()}| = {vals[row, col]:.3e} at {pts[col].tolist()}",
            pts[col].tolist(),
            float(vals[row, col]),
            {"index": sel[row].label()},
        )


def reflect_form(
    w: FormField, boundary_points=None, g: MetricField | None = None, tol: float = 1e-10
) -> ReflectedForm:
    """Extend a form with vanishing normal part to the full ball.

    A ``tangential-zero`` form is first mapped through the Hodge star of ``g``,
    which turns the tangential condition into the normal one.
    """
    if w.domain is None or not w.domain.has_interface:
        raise DomainError("form domain has no reflection interface")
    via_star = False
    src = w
    if w.tag == "tangential-zero":
        if g is None:
            raise DomainError("a tangential-zero form needs the metric to be reflected via the star")
        src = hodge_star(w, g)
        via_star = True
    if boundary_points is None:
        boundary_points = boundary_grid(w.domain)
    _check_normal_trace(src, boundary_points, tol)
    n = src.n
    coeffs = {I: ex.reflect_expr(c, n, I.contains_n(n)) for I, c in src.coeffs.items()}
    return ReflectedForm(FormField(n, src.k, coeffs, src.domain.reflected(), src.tag), src, via_star)


def _rel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Error relative to ``max(1, |b|)`` per row (max over trailing axes)."""
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    if a.shape[1] == 0:
        return np.zeros(len(a))
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), axis=1)


def _report(identity, err, pts, tol, **detail) -> Report:
    i = worst_index(err, pts)
    return Report(identity, pts[i].tolist(), float(err[i]), tol, bool(err[i] <= tol), detail)


def _folded(pts: np.ndarray) -> np.ndarray:
    out = pts.copy()
    out[:, -1] = np.abs(out[:, -1])
    return out


def full_ball_samples(gt: ReflectedMetric, count: int = 200, seed: int = 0) -> np.ndarray:
    return random_points(gt.metric.domain, count, seed)


def verify_metric_positive_definite(gt: ReflectedMetric, points=None, tol: float = 1e-12) -> list[Report]:
    """Sylvester check of the reflected metric plus minor/determinant agreement with the source.

    For ``sylvester-minors`` ``worst_error`` is the smallest leading minor and
    the check passes when it exceeds ``0``.
    """
    pts = full_ball_samples(gt) if points is None else np.atleast_2d(points)
    n = gt.n
    mt = gt.metric.leading_minors(pts)
    ms = gt.source.leading_minors(_folded(pts))
    smallest = np.min(mt, axis=1)
    i = int(np.argmin(smallest))
    first = np.argmax(mt[i] <= 0.0) + 1 if np.any(mt[i] <= 0) else None
    sylvester = Report(
        "sylvester-minors",
        pts[i].tolist(),
        float(smallest[i]),
        0.0,
        bool(np.all(mt > 0.0)),
        {"failing_minor": first} if first else {},
    )
    agree = _rel(mt[:, : n - 1], ms[:, : n - 1])
    det = _rel(mt[:, -1:], ms[:, -1:])
    return [
        sylvester,
        _report("leading-minors-match-source", agree, pts, tol),
        _report("top-minor-identity", det, pts, tol),
    ]


def verify_det_and_inverse_identities(
    gt: ReflectedMetric, points=None, det_tol: float = 1e-12, inv_tol: float = 1e-10
) -> list[Report]:
    """``det g~(x) = det g(x', |x_n|)`` and the sign pattern of ``g~^{-1}``."""
    pts = full_ball_samples(gt) if points is None else np.atleast_2d(points)
    n = gt.n
    folded = _folded(pts)
    gt_vals = gt.metric.values(pts)
    gs_vals = gt.source.values(folded)
    det_err = _rel(np.linalg.det(gt_vals), np.linalg.det(gs_vals))
    inv_t = np.linalg.inv(gt_vals)
    inv_s = np.linalg.inv(gs_vals)
    s = np.where(pts[:, -1] >= 0, 1.0, -1.0)
    pattern = np.ones((len(pts), n, n))
    pattern[:, -1, :-1] = s[:, None]
    pattern[:, :-1, -1] = s[:, None]
    inv_err = _rel(inv_t, pattern * inv_s)
    return [
        _report("det-identity", det_err, pts, det_tol),
        _report("inverse-sign-pattern", inv_err, pts, inv_tol),
    ]


def interface_lipschitz_estimate(gt: ReflectedMetric, count: int = 64, t: float = 1e-4, seed: int = 0) -> float:
    """Largest sampled difference quotient of the reflected entries across the interface.

    A sampled estimate only; it is not a certified Lipschitz constant.
    """
    dom = gt.source.domain
    upper, lower = mirrored_pairs(dom, count, seed, band=0.0)
    upper = upper.copy()
    upper[:, -1] = t
    lower = upper.copy()
    lower[:, -1] = -t
    dv = gt.metric.values(upper) - gt.metric.values(lower)
    return float(np.max(np.abs(dv)) / (2 * t))


def _pairs(wt: ReflectedForm, pairs, count, seed, band):
    if pairs is not None:
        upper, lower = (np.atleast_2d(p) for p in pairs)
        return upper, lower
    dom = wt.source.domain
    return mirrored_pairs(dom, count, seed, band)


def _flip_signs(indices, n: int, flip_if_contains: bool) -> np.ndarray:
    return np.array([-1.0 if idx.contains_n(n) == flip_if_contains else 1.0 for idx in indices])


def verify_derivative_identities(
    wt: ReflectedForm,
    gt: ReflectedMetric,
    pairs=None,
    count: int = 50,
    seed: int = 0,
    band: float | None = None,
    tol: float = 1e-8,
) -> list[Report]:
    """Parity of ``d w~`` (flip iff ``n in I``) and ``d *~ w~`` (flip iff ``n not in J``).

    Left sides come from the reflected trees at lower points; right sides
    from the source form and metric at the mirrored upper points.
    """
    upper, lower = _pairs(wt, pairs, count, seed, band)
    n = wt.n
    src, g = wt.source, gt.source
    both = np.vstack([upper, lower])
    mirrored = np.vstack([upper, upper])
    lower_mask = np.r_[np.zeros(len(upper), bool), np.ones(len(lower), bool)]

    dwt = exterior_derivative(wt.form)
    dws = exterior_derivative(src)
    signs = np.where(lower_mask[:, None], _flip_signs(dwt.indices, n, True)[None, :], 1.0)
    err_d = _rel(dwt.values(both), signs * dws.values(mirrored))

    dst = exterior_derivative(hodge_star(wt.form, gt.metric))
    dss = exterior_derivative(hodge_star(src, g))
    signs = np.where(lower_mask[:, None], _flip_signs(dst.indices, n, False)[None, :], 1.0)
    err_s = _rel(dst.values(both), signs * dss.values(mirrored))
    return [
        _report("d-parity", err_d, both, tol),
        _report("dstar-parity", err_s, both, tol),
    ]


def _norm_terms(w: FormField, g: MetricField, pts: np.ndarray):
    ginv = np.linalg.inv(g.values(pts))
    dw = exterior_derivative(w)
    dsq = norm_sq_values(dw.values(pts), ginv, w.k + 1) if dw.indices else np.zeros(len(pts))
    if w.k:
        delta = codifferential(w, g)
        csq = norm_sq_values(delta.values(pts), ginv, w.k - 1)
        dstar = exterior_derivative(hodge_star(w, g))
        dstar_sq = norm_sq_values(dstar.values(pts), ginv, w.n - w.k + 1)
    else:
        csq = dstar_sq = np.zeros(len(pts))
    wsq = norm_sq_values(w.values(pts), ginv, w.k)
    return dsq, csq, dstar_sq, wsq


def verify_norm_and_inequality_transfer(
    wt: ReflectedForm,
    gt: ReflectedMetric,
    C: float = 1.0,
    pairs=None,
    count: int = 30,
    seed: int = 0,
    band: float | None = None,
    tol: float = 1e-8,
) -> list[Report]:
    """``|d w~|``, ``|delta~ w~|`` and the structural residual agree at mirrored points."""
    upper, lower = _pairs(wt, pairs, count, seed, band)
    dt, ct, dst, wt_sq = _norm_terms(wt.form, gt.metric, lower)
    ds, cs, _, ws_sq = _norm_terms(wt.source, gt.source, upper)
    both = np.vstack([lower])
    res_t = ct + dt - C * wt_sq
    res_s = cs + ds - C * ws_sq
    return [
        _report("codifferential-norm-identity", _rel(np.sqrt(ct), np.sqrt(dst)), both, tol),
        _report("d-norm-transfer", _rel(dt, ds), both, tol),
        _report("codifferential-norm-transfer", _rel(ct, cs), both, tol),
        _report("structural-residual-transfer", _rel(res_t, res_s), both, tol, C=C),
    ]


def _rqmc_integrals(exprs, domain, nodes: int, replicates: int, seed: int) -> np.ndarray:
    """Replicate estimates of ``int_domain |f|`` for each tree, shape ``(replicates, len(exprs))``."""
    n = domain.n
    per = max(2, nodes // replicates)
    out = np.empty((replicates, len(exprs)))
    for r in range(replicates):
        rseed = seed + 1000003 * r
        if domain.shape in ("ball", "half-ball"):
            half = domain.shape == "half-ball"
            pts = domain.radius * unit_ball_nodes(n, per, rseed, half)
            vol = ball_volume(n, domain.radius, half)
        elif domain.shape in ("box", "box-face"):
            lo, hi = np.array(domain.lower), np.array(domain.upper)
            pts = lo + sobol(n, per, rseed) * (hi - lo)
            vol = float(np.prod(hi - lo))
        else:
            raise DomainError(f"no quadrature rule for domain shape {domain.shape!r}")
        out[r] = np.abs(ex.evaluate_many(exprs, pts)).mean(axis=1) * vol
    return out


def verify_integral_doubling(
    wt: ReflectedForm,
    nodes: int = 2**17,
    replicates: int = 16,
    seed: int = 0,
    sigmas: float = 3.0,
    floor: float = 1e-13,
) -> list[Report]:
    """Full-ball integral of ``|w~_I|`` is twice the half-ball integral of ``|w_I|``.

    Both sides use common random numbers: the half-ball nodes are the folds
    ``(x', |x_n|)`` of the full-ball nodes, so the two integrals are computed
    by different trees at different points but share their sampling error.
    ``tolerance`` is ``sigmas`` standard errors of the ratio, combining each
    side's own replicate error as if the two were independent.
    """
    src = wt.source
    indices = src.indices
    full = _rqmc_integrals([wt.form.coeffs[I] for I in indices], wt.form.domain, nodes, replicates, seed)
    half = _rqmc_integrals([src.coeffs[I] for I in indices], src.domain, nodes, replicates, seed)
    reports = []
    R = replicates
    for c, I in enumerate(indices):
        F, H = full[:, c], half[:, c]
        fm, hm = F.mean(), H.mean()
        if fm <= floor and hm <= floor:
            reports.append(Report(f"integral-doubling[{I.label()}]", None, 0.0, 0.0, True, {"verdict": "numerically zero"}))
            continue
        var_f = F.var(ddof=1) / R
        var_h = H.var(ddof=1) / R
        ratio = fm / hm
        sigma = float(np.sqrt(var_f / hm**2 + fm**2 * var_h / hm**4))
        err = abs(ratio - 2.0)
        tolerance = sigmas * sigma + 1e-12
        reports.append(
            Report(
                f"integral-doubling[{I.label()}]",
                None,
                float(err),
                float(tolerance),
                bool(err <= tolerance),
                {"ratio": float(ratio), "sigma": sigma, "full": float(fm), "half": float(hm), "relative_error": float(err / 2)},
            )
        )
    return reports


def one_sided_slopes(f: ex.Expr, point, n: int, h: float = 1e-4) -> dict:
    """Forward/backward ``d_n`` quotients at an interface point and a stencil tolerance.

    The tolerance is twice the larger Richardson gap ``|D(h) - D(h/2)|`` of
    the two one-sided quotients, i.e. their estimated truncation error.
    """
    p = np.asarray(point, dtype=float)
    e = np.zeros_like(p)
    e[n - 1] = 1.0

    def quotients(step):
        pts = np.array([p + step * e, p, p - step * e])
        a, b, c = ex.evaluate_many([f], pts)[0]
        return (a - b) / step, (b - c) / step

    fwd, bwd = quotients(h)
    fwd2, bwd2 = quotients(h / 2)
    tol = 2.0 * max(abs(fwd - fwd2), abs(bwd - bwd2)) + 1e-10
    return {"forward": float(fwd), "backward": float(bwd), "jump": float(abs(fwd - bwd)), "stencil_tolerance": float(tol)}


def c1_failure_witness(wt: ReflectedForm, points=None, h: float = 1e-4, factor: float = 10.0) -> Report:
    """Look for a coefficient whose one-sided normal derivatives disagree at the interface."""
    n = wt.n
    if points is None:
        points = boundary_grid(wt.source.domain, 7)
    pts = np.atleast_2d(points)
    best = None
    for I, c in wt.form.coeffs.items():
        for p in pts:
            s = one_sided_slopes(c, p, n, h)
            score = s["jump"] / s["stencil_tolerance"]
            if best is None or score > best[0]:
                best = (score, I, p, s)
    score, I, p, s = best
    return Report(
        "c1-failure-witness",
        p.tolist(),
        s["jump"],
        factor * s["stencil_tolerance"],
        bool(s["jump"] > factor * s["stencil_tolerance"]),
        {"index": I.label(), **s},
    )


def run_reflection_chain(
    g: MetricField,
    w: FormField,
    C: float | None = None,
    samples: int = 50,
    seed: int = 0,
    nodes: int = 2**17,
    stages=None,
    tol: float | None = None,
) -> list[Report]:
    """The whole verification chain in proof order.

    ``tol`` overrides the ``1e-8`` tolerance of the derivative and norm
    stages; the metric stages keep their ``1e-12``/``1e-10`` defaults.

    Refusals become failing reports named after the refusing stage.
    """
    from .errors import ReflectionRefused
    from .forms import fit_structural_constant

    out = []
    want = (lambda s: True) if not stages else (lambda s: s in stages)
    try:
        gt = reflect_metric(g)
    except ReflectionRefused as exc:
        return [Report(exc.stage, exc.worst_point, exc.worst_error or 0.0, 1e-10, False, {"message": str(exc)})]
    try:
        wt = reflect_form(w, g=g)
    except ReflectionRefused as exc:
        return [Report(exc.stage, exc.worst_point, exc.worst_error or 0.0, 1e-10, False, {"message": str(exc), **(exc.detail or {})})]
    pts = random_points(gt.metric.domain, 4 * samples, seed)
    if want("positive-definite"):
        out += verify_metric_positive_definite(gt, pts)
    if want("det-inverse"):
        out += verify_det_and_inverse_identities(gt, pts)
    if want("derivatives"):
        out += verify_derivative_identities(wt, gt, count=samples, seed=seed, tol=tol or 1e-8)
    if want("norms"):
        if C is None:
            upper, _ = mirrored_pairs(wt.source.domain, samples, seed + 1)
            C = fit_structural_constant(wt.source, g, upper)
            C = 0.0 if not np.isfinite(C) else C
        out += verify_norm_and_inequality_transfer(wt, gt, C, count=samples, seed=seed, tol=tol or 1e-8)
    if want("doubling"):
        out += verify_integral_doubling(wt, nodes=nodes, seed=seed)
    return out
