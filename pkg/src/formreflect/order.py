"""Vanishing order in 1-mean: averaged integrals over shrinking (half-)balls.

The averaged integral ``A(r) = (1/vol) int_{B_r(p)} |f| dx`` is computed with
a fixed set of scrambled Sobol nodes in the unit (half-)ball, scaled by ``r``.
Since the nodes are the same for every radius, a homogeneous ``f`` of degree
``m`` gives ``A(r) = r**m * A(1)`` up to rounding and the log-log fit is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import expr as ex
from .errors import DomainError
from .expr import ChartDomain, ScalarField
from .forms import FormField
from .reports import Report, rows_csv
from .sampling import unit_ball_nodes

FLOOR = 1e-13
FIT_TOL = 0.05
DEFAULT_RADII = (0.4, 0.2, 0.1, 0.05, 0.025)


def _ball_inside(domain: ChartDomain | None, p: np.ndarray, r: float, half: bool) -> bool:
    if domain is None or domain.shape == "torus":
        return True
    tol = 1e-12
    if domain.shape in ("ball", "half-ball", "annulus"):
        d = float(np.linalg.norm(p))
        ok = d + r <= domain.radius + tol
        if domain.shape == "annulus":
            ok &= d - r >= domain.inner - tol
        if domain.shape == "half-ball":
            ok &= (abs(p[-1]) <= tol) if half else (p[-1] - r >= -tol)
        return bool(ok)
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    lo_need = p - r
    if half:
        lo_need[-1] = p[-1]
    return bool(np.all(lo_need >= lo - tol) and np.all(p + r <= hi + tol))


def _nodes(n: int, nodes: int, replicates: int, seed: int, half: bool) -> list[np.ndarray]:
    per = max(2, nodes // replicates)
    return [unit_ball_nodes(n, per, seed + 7907 * k, half) for k in range(replicates)]


def _averages(exprs, p, r, unit_sets) -> np.ndarray:
    """Replicate averages of ``|f|`` over ``B_r(p)``, shape ``(replicates, len(exprs))``."""
    return np.array([np.abs(ex.evaluate_many(exprs, p + r * u)).mean(axis=1) for u in unit_sets])


def averaged_halfball_integral(
    f,
    p,
    r: float,
    half: bool = False,
    nodes: int = 2**15,
    replicates: int = 8,
    seed: int = 0,
) -> tuple[float, float]:
    """Average of ``|f|`` over ``B_r(p)`` (intersected with ``{x_n >= 0}`` when ``half``).

    Returns
    -------
    (value, error)
        Replicate mean and its standard error.

    Raises
    ------
    DomainError
        If the (half-)ball leaves the domain of ``f``.
    """
    domain = f.domain if isinstance(f, ScalarField) else None
    e = f.expr if isinstance(f, ScalarField) else ex.as_expr(f)
    p = np.asarray(p, dtype=float)
    if r <= 0:
        raise DomainError("radius must be positive")
    if not _ball_inside(domain, p, r, half):
        raise DomainError(f"ball of radius {r} at {p.tolist()} exits the domain")
    vals = _averages([e], p, r, _nodes(len(p), nodes, replicates, seed, half))[:, 0]
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


@dataclass
class CoefficientOrder:
    index: str
    averages: list
    errors: list
    exponent: float | None
    band: float | None
    verdict: str

    def vanishes_to(self, m: float, fit_tol: float = FIT_TOL) -> bool:
        if self.exponent is None:
            return True
        return self.exponent >= m - fit_tol

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "averages": self.averages,
            "errors": self.errors,
            "exponent": self.exponent,
            "band": self.band,
            "verdict": self.verdict,
        }


@dataclass
class OrderReport:
    point: list
    radii: list
    half: bool
    coefficients: list = field(default_factory=list)

    @property
    def overall(self) -> float | None:
        """Smallest fitted exponent, ``None`` when every coefficient is numerically zero."""
        vals = [c.exponent for c in self.coefficients if c.exponent is not None]
        return min(vals) if vals else None

    @property
    def verdict(self) -> str:
        return "numerically zero" if self.overall is None else "finite order"

    def coefficient(self, label: str) -> CoefficientOrder:
        for c in self.coefficients:
            if c.index == label:
                return c
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "radii": self.radii,
            "half": self.half,
            "overall": self.overall,
            "verdict": self.verdict,
            "coefficients": [c.to_dict() for c in self.coefficients],
        }

    def loglog_csv(self) -> str:
        rows = []
        for c in self.coefficients:
            for r, a in zip(self.radii, c.averages):
                rows.append((c.index, float(np.log(r)), float(np.log(a)) if a > 0 else float("-inf")))
        return rows_csv(("index", "log_r", "log_A"), rows)


def _fit(radii: np.ndarray, A: np.ndarray, floor: float):
    keep = A > floor
    if keep.sum() < 4:
        return None, None, "numerically zero"
    x, y = np.log(radii[keep]), np.log(A[keep])
    fit = stats.linregress(x, y)
    dof = len(x) - 2
    band = float(stats.t.ppf(0.975, dof) * fit.stderr) if dof > 0 else float("inf")
    return float(fit.slope), band, "finite order"


def _check_radii(radii) -> np.ndarray:
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 4:
        raise DomainError("the fit needs at least 4 radii")
    if np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise DomainError("radii must be positive and strictly decreasing")
    return radii


def _coefficient_items(w):
    if isinstance(w, FormField):
        return [(I.label(), w.coeffs[I]) for I in w.indices], w.domain, w.n
    if isinstance(w, ScalarField):
        return [("f", w.expr)], w.domain, w.n
    raise DomainError("expected a FormField or ScalarField")


def _auto_half(domain, p) -> bool:
    return bool(domain is not None and domain.has_interface and abs(p[-1]) <= 1e-12)


def estimate_order_1mean(
    w,
    p=None,
    radii=DEFAULT_RADII,
    half: bool | None = None,
    nodes: int = 2**15,
    replicates: int = 8,
    seed: int = 0,
    floor: float = FLOOR,
) -> OrderReport:
    """Fit ``log A(r)`` against ``log r`` for every coefficient.

    ``half`` defaults to half-ball mode when ``p`` lies on the boundary
    portion of the domain.  Coefficients whose averages fall below ``floor``
    at all but three radii are reported as numerically zero.
    """
    items, domain, n = _coefficient_items(w)
    p = np.zeros(n) if p is None else np.asarray(p, dtype=float)
    radii = _check_radii(radii)
    if half is None:
        half = _auto_half(domain, p)
    for r in radii:
        if not _ball_inside(domain, p, float(r), half):
            raise DomainError(f"ball of radius {r} at {p.tolist()} exits the domain")
    units = _nodes(n, nodes, replicates, seed, half)
    exprs = [e for _, e in items]
    per_r = np.array([_averages(exprs, p, float(r), units) for r in radii])  # (radii, rep, coeffs)
    means = per_r.mean(axis=1)
    errs = per_r.std(axis=1, ddof=1) / np.sqrt(replicates)
    report = OrderReport(p.tolist(), radii.tolist(), bool(half))
    for c, (label, _) in enumerate(items):
        slope, band, verdict = _fit(radii, means[:, c], floor)
        report.coefficients.append(
            CoefficientOrder(label, means[:, c].tolist(), errs[:, c].tolist(), slope, band, verdict)
        )
    return report


def compare_orders_under_reflection(
    w: FormField,
    wt,
    p=None,
    radii=DEFAULT_RADII,
    nodes: int = 2**15,
    replicates: int = 8,
    seed: int = 0,
    sigmas: float = 3.0,
    exponent_tol: float = 0.1,
) -> list[Report]:
    """Full-ball averages of ``|w~_I|`` against half-ball averages of ``|w_I|``.

    The doubled integral over the doubled volume gives a ratio of ``1`` at
    every radius.  The half-ball nodes are the folds of the full-ball nodes
    (common random numbers); the ratio tolerance is ``sigmas`` standard
    errors combined from the two sides' own replicate errors.
    """
    target = wt.form if hasattr(wt, "form") else wt
    n = w.n
    p = np.zeros(n) if p is None else np.asarray(p, dtype=float)
    src = estimate_order_1mean(w, p, radii, half=True, nodes=nodes, replicates=replicates, seed=seed)
    ext = estimate_order_1mean(target, p, radii, half=False, nodes=nodes, replicates=replicates, seed=seed)
    reports = []
    for cs in src.coefficients:
        ce = ext.coefficient(cs.index)
        a_h, a_f = np.array(cs.averages), np.array(ce.averages)
        s_h, s_f = np.array(cs.errors), np.array(ce.errors)
        if cs.verdict == "numerically zero" or ce.verdict == "numerically zero":
            same = cs.verdict == ce.verdict
            reports.append(
                Report(f"order-ratio[{cs.index}]", p.tolist(), 0.0, 0.0, same, {"half": cs.verdict, "full": ce.verdict})
            )
            continue
        ratio = a_f / a_h
        sigma = np.sqrt((s_f / a_h) ** 2 + (a_f * s_h / a_h**2) ** 2)
        err = np.abs(ratio - 1.0)
        slack = err - (sigmas * sigma + 1e-12)
        i = int(np.argmax(slack))
        reports.append(
            Report(
                f"order-ratio[{cs.index}]",
                p.tolist(),
                float(err[i]),
                float(sigmas * sigma[i] + 1e-12),
                bool(np.all(slack <= 0)),
                {"radius": src.radii[i], "ratios": ratio.tolist()},
            )
        )
        gap = abs(cs.exponent - ce.exponent)
        reports.append(
            Report(
                f"order-exponent[{cs.index}]",
                p.tolist(),
                float(gap),
                exponent_tol,
                bool(gap <= exponent_tol),
                {"half": cs.exponent, "full": ce.exponent},
            )
        )
    return reports
