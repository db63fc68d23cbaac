"""Random test inputs: adapted metrics, normal-zero forms, harmonic differentials.

Every generator draws from ``numpy.random.default_rng(seed)`` and builds
coefficients as small rationals, so outputs are reproducible and
polynomial inputs stay exact.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from . import expr as ex
from .chart import CoordinateMap, pullback_metric
from .expr import ChartDomain, Expr
from .forms import FormField, MetricField
from .indices import enumerate_multi_indices


def _q(rng, scale: int = 10, low: int = -5, high: int = 5) -> Expr:
    """Random rational ``k / scale`` with ``k`` in ``[low, high]``."""
    return ex.const(Fraction(int(rng.integers(low, high + 1)), scale))


def _monomial(rng, n: int, degree: int, variables=None) -> Expr:
    variables = list(range(1, n + 1)) if variables is None else list(variables)
    out = ex.ONE
    for _ in range(degree):
        out = ex.mul(out, ex.var(int(rng.choice(variables))))
    return out


def _term(rng, n: int, trig: bool, variables=None) -> Expr:
    variables = list(range(1, n + 1)) if variables is None else list(variables)
    kind = int(rng.integers(0, 4 if trig else 2))
    v = ex.var(int(rng.choice(variables)))
    if kind == 0:
        return _monomial(rng, n, int(rng.integers(1, 3)), variables)
    if kind == 1:
        return ex.mul(_q(rng), _monomial(rng, n, int(rng.integers(0, 3)), variables))
    if kind == 2:
        return ex.sin(ex.add(v, _q(rng)))
    w = ex.var(int(rng.choice(variables)))
    return ex.cos(ex.add(v, ex.mul(_q(rng, 2), w)))


def random_poly(rng, n: int, terms: int = 3, trig: bool = False, variables=None) -> Expr:
    return ex.total(ex.mul(_q(rng), _term(rng, n, trig, variables)) for _ in range(terms))


def random_adapted_metric(n: int, seed: int = 0, radius: float = 0.5, strength: int = 10) -> MetricField:
    """Symmetric ``g = I + P`` on a half-ball with ``g_jn = delta_jn`` on ``{x_n = 0}``.

    Tangential perturbations vanish at the origin; every entry of the
    normal row carries a factor ``x_n``.  Coefficients are at most
    ``1/(2*strength)`` in size, which keeps ``g`` positive definite on the
    default radius.
    """
    rng = np.random.default_rng(seed)
    xn = ex.var(n)
    rows = [[ex.ZERO] * n for _ in range(n)]
    small = lambda: ex.const(Fraction(int(rng.integers(-5, 6)), 10 * strength))  # noqa: E731
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            base = ex.ONE if i == j else ex.ZERO
            if j < n:
                pert = ex.mul(small(), _monomial(rng, n, int(rng.integers(1, 3))))
            else:
                pert = ex.mul(ex.mul(small(), xn), ex.add(ex.ONE, _monomial(rng, n, int(rng.integers(0, 2)))))
            rows[i - 1][j - 1] = rows[j - 1][i - 1] = ex.add(base, pert)
    return MetricField(tuple(tuple(r) for r in rows), ChartDomain(n, "half-ball", radius))


def random_normal_zero_form(n: int, k: int, seed: int = 0, radius: float = 0.5, trig: bool = True) -> FormField:
    """k-form with polynomial/trigonometric coefficients; n-containing ones carry a factor ``x_n``."""
    rng = np.random.default_rng(seed)
    coeffs = {}
    for I in enumerate_multi_indices(n, k):
        c = random_poly(rng, n, int(rng.integers(1, 4)), trig)
        if I.contains_n(n):
            c = ex.mul(ex.var(n), c)
        coeffs[I] = c
    return FormField(n, k, coeffs, ChartDomain(n, "half-ball", radius), "normal-zero")


def even_harmonic(f: Expr, n: int) -> Expr:
    """Euclidean-harmonic extension of ``f(x')`` that is even in ``x_n``.

    ``h = sum_j (-1)^j x_n^(2j) / (2j)! * Lap'^j f``; finite for polynomial ``f``.
    """
    terms = []
    cur = f
    j = 0
    while cur is not ex.ZERO:
        coef = ex.const(Fraction((-1) ** j, math.factorial(2 * j)))
        terms.append(ex.mul(coef, ex.mul(ex.power(ex.var(n), 2 * j), cur)))
        cur = ex.total(ex.derivative(ex.derivative(cur, i), i) for i in range(1, n))
        j += 1
        if j > 64:
            raise ValueError("tangential data is not polynomial")
    return ex.total(terms)


def random_warp(n: int, rng) -> CoordinateMap:
    """Polynomial map fixing ``{x_n = 0}``-orthogonality: ``Phi(y, t) = (y + psi(y) + t^2 q, t + t^2 s)``.

    ``psi`` is quadratic so ``D Phi(0) = I``; the ``t^2`` terms leave the
    normal column at ``t = 0`` equal to ``e_n``.  The Euclidean pullback is
    therefore adapted at the origin.
    """
    t = ex.var(n)
    t2 = ex.power(t, 2)
    comps = []
    for i in range(1, n):
        psi = ex.mul(_q(rng, 20), _monomial(rng, n, 2, range(1, n))) if n > 1 else ex.ZERO
        q = ex.mul(_q(rng, 20), _monomial(rng, n, int(rng.integers(0, 2))))
        comps.append(ex.total([ex.var(i), psi, ex.mul(t2, q)]))
    s = ex.mul(_q(rng, 20), _monomial(rng, n, int(rng.integers(0, 2))))
    comps.append(ex.add(t, ex.mul(t2, s)))
    return CoordinateMap(tuple(comps))


def random_harmonic_differential(n: int, seed: int = 0, degree: int = 4, warp: bool = True, radius: float = 0.3):
    """``(gamma, g)`` with ``gamma = d(h o Phi)`` harmonic for ``g = Phi^* delta`` and ``n(gamma) = 0``.

    ``h`` is an even Euclidean-harmonic polynomial, so its normal derivative
    vanishes on ``{x_n = 0}``; pulling back by a warp that keeps the normal
    column equal to ``e_n`` along the boundary preserves harmonicity (an
    isometry) and the boundary condition.  All coefficients are rational.
    """
    rng = np.random.default_rng(seed)
    low = int(rng.integers(1, degree + 1))
    f = ex.total(
        ex.mul(_q(rng, 4, -4, 4), _monomial(rng, n, d, range(1, n)) if n > 1 else ex.ONE)
        for d in range(low, degree + 1)
        for _ in range(2)
    )
    h = even_harmonic(f, n)
    domain = ChartDomain(n, "half-ball", radius)
    if warp:
        phi = random_warp(n, rng)
        h = ex.substitute(h, {i + 1: c for i, c in enumerate(phi.components)})
        g = pullback_metric(phi, MetricField.euclidean(n), domain)
    else:
        g = MetricField.euclidean(n, domain)
    gamma = FormField(n, 1, {(i,): ex.derivative(h, i) for i in range(1, n + 1)}, domain, "normal-zero")
    return gamma, g
