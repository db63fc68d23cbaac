import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from formreflect import expr as ex
from formreflect.errors import ChartNotAdaptedError
from formreflect.expr import ChartDomain
from formreflect.forms import (
    FormField,
    MetricField,
    boundary_parts,
    codifferential,
    exterior_derivative,
    fiber_norm_sq,
    harmonicity_residual,
    hodge_star,
    require_adapted,
    star_values,
    structural_inequality_residual,
    tangential_restrict,
)
from formreflect.generators import random_adapted_metric, random_normal_zero_form, random_poly
from formreflect.indices import enumerate_multi_indices, permutation_sign
from formreflect.sampling import boundary_grid, random_points

HALF2 = ChartDomain(2, "half-ball", 1.0)


def coeff(w, idx, pt):
    return float(ex.evaluate_expr(w[idx], np.asarray(pt, dtype=float)))


def random_form(n, k, seed):
    rng = np.random.default_rng(seed)
    return FormField(n, k, {I: random_poly(rng, n, 3, trig=True) for I in enumerate_multi_indices(n, k)})


def random_spd(n, seed):
    """Constant SPD metric, so brute-force contractions need no derivatives."""
    rng = np.random.default_rng(seed)
    A = rng.uniform(-0.4, 0.4, (n, n))
    G = np.eye(n) + A @ A.T
    return MetricField(tuple(tuple(ex.const(float(G[i, j])) for j in range(n)) for i in range(n))), G


# ---------------------------------------------------------------------------
# exterior derivative


def test_d_examples():
    w = FormField(2, 1, {(2,): "x1"})
    assert coeff(exterior_derivative(w), (1, 2), [0.3, 0.7]) == 1.0
    h = ex.parse_expression("x1^2-x2^2", 2)
    dh = FormField(2, 1, {(1,): ex.derivative(h, 1), (2,): ex.derivative(h, 2)})
    assert exterior_derivative(dh)[(1, 2)] is ex.ZERO or coeff(exterior_derivative(dh), (1, 2), [0.2, 0.1]) == 0


def test_d_of_top_form_is_empty():
    w = FormField(2, 2, {(1, 2): "x1"})
    assert exterior_derivative(w).indices == []


def test_d_matches_central_difference_assembly():
    n = 3
    w = random_form(n, 1, 7)
    dw = exterior_derivative(w)
    pts = np.random.default_rng(1).uniform(-0.7, 0.7, (20, n))
    for p in pts:
        for (i, j) in [(1, 2), (1, 3), (2, 3)]:
            fd = ex.finite_diff_partial(w[(j,)], i, p) - ex.finite_diff_partial(w[(i,)], j, p)
            assert coeff(dw, (i, j), p) == pytest.approx(fd, abs=1e-6)


@given(st.integers(0, 10_000), st.integers(2, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n - 2))))
def test_dd_vanishes(seed, nk):
    n, k = nk
    w = random_form(n, k, seed)
    ddw = exterior_derivative(exterior_derivative(w))
    pts = np.random.default_rng(seed).uniform(-1, 1, (50, n))
    assert np.max(np.abs(ddw.values(pts)), initial=0.0) <= 1e-9


# ---------------------------------------------------------------------------
# Hodge star, codifferential, norms


def test_star_examples():
    e3 = MetricField.euclidean(3)
    s = hodge_star(FormField(3, 1, {(1,): 1}), e3)
    assert coeff(s, (2, 3), [0, 0, 0]) == 1.0 and coeff(s, (1, 3), [0, 0, 0]) == 0.0
    for n in (2, 3, 4):
        en = MetricField.euclidean(n)
        top = tuple(range(1, n + 1))
        assert coeff(hodge_star(FormField(n, 0, {(): 1}), en), top, np.zeros(n)) == 1.0
        assert coeff(hodge_star(FormField(n, n, {top: 1}), en), (), np.zeros(n)) == 1.0
    g = MetricField.from_strings([["4", "0"], ["0", "1"]], 2)
    assert coeff(hodge_star(FormField(2, 1, {(1,): 1}), g), (2,), [0, 0]) == pytest.approx(0.5)


def brute_star(vals, G, n, k):
    """Full tensor contraction with the Levi-Civita symbol, no complement bookkeeping."""
    Ginv = np.linalg.inv(G)
    full = {}
    idx = enumerate_multi_indices(n, k)
    for seq in itertools.permutations(range(1, n + 1), k):
        srt = tuple(sorted(seq))
        full[seq] = permutation_sign(seq) * permutation_sign(srt) * vals[idx.index(srt)] if k else vals[0]
    if k == 0:
        full = {(): vals[0]}
    out = []
    for J in enumerate_multi_indices(n, n - k):
        total = 0.0
        for I in itertools.permutations(range(1, n + 1), k):
            eps = permutation_sign(I + tuple(J))
            if eps == 0:
                continue
            raised = 0.0
            for K in itertools.permutations(range(1, n + 1), k):
                prod = np.prod([Ginv[a - 1, b - 1] for a, b in zip(I, K)]) if k else 1.0
                raised += prod * full.get(K, 0.0)
            total += eps * raised
        fact = np.prod(range(1, k + 1)) if k else 1
        out.append(np.sqrt(np.linalg.det(G)) * total / fact)
    return np.array(out)


@given(st.integers(0, 10_000), st.integers(2, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_star_matches_brute_force(seed, nk):
    n, k = nk
    g, G = random_spd(n, seed)
    w = random_form(n, k, seed)
    p = np.random.default_rng(seed).uniform(-1, 1, n)
    got = hodge_star(w, g).values(p)[0]
    want = brute_star(w.values(p)[0], G, n, k)
    assert np.allclose(got, want, rtol=1e-9, atol=1e-10)


@given(st.integers(0, 10_000), st.integers(2, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_star_star_sign(seed, nk):
    n, k = nk
    g = random_adapted_metric(n, seed)
    w = random_form(n, k, seed)
    pts = random_points(g.domain, 10, seed)
    ss = hodge_star(hodge_star(w, g), g).values(pts)
    assert np.allclose(ss, (-1) ** (k * (n - k)) * w.values(pts), rtol=1e-9, atol=1e-9)


@given(st.integers(0, 10_000), st.integers(2, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_star_is_an_isometry(seed, nk):
    n, k = nk
    g = random_adapted_metric(n, seed)
    w = random_form(n, k, seed)
    pts = random_points(g.domain, 20, seed)
    a = fiber_norm_sq(w, g, pts)
    b = fiber_norm_sq(hodge_star(w, g), g, pts)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_codifferential_examples():
    e2 = MetricField.euclidean(2)
    d = codifferential(FormField(2, 1, {(1,): "x1"}), e2)
    assert coeff(d, (), [0.3, 0.2]) == pytest.approx(-1.0)
    dh = FormField(2, 1, {(1,): "2*x1", (2,): "-2*x2"})
    assert coeff(codifferential(dh, e2), (), [0.3, 0.2]) == pytest.approx(0.0, abs=1e-14)
    assert codifferential(FormField(2, 0, {(): "x1"}), e2).is_zero


@given(st.integers(0, 10_000), st.integers(2, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))))
def test_codifferential_norm_equals_d_star_norm(seed, nk):
    n, k = nk
    g = random_adapted_metric(n, seed)
    w = random_form(n, k, seed)
    pts = random_points(g.domain, 20, seed)
    a = fiber_norm_sq(codifferential(w, g), g, pts)
    b = fiber_norm_sq(exterior_derivative(hodge_star(w, g)), g, pts)
    assert np.allclose(np.sqrt(a), np.sqrt(b), rtol=1e-9, atol=1e-12)


def test_norm_examples():
    e2 = MetricField.euclidean(2)
    assert fiber_norm_sq(FormField(2, 1, {(1,): 3, (2,): 4}), e2, [[0, 0]])[0] == pytest.approx(25.0)
    g = MetricField.from_strings([["4", "0"], ["0", "1"]], 2)
    assert fiber_norm_sq(FormField(2, 1, {(1,): 1}), g, [[0, 0]])[0] == pytest.approx(0.25)


@given(st.integers(0, 10_000), st.integers(1, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_norm_positive_and_zero_only_for_zero(seed, nk):
    n, k = nk
    g, _ = random_spd(n, seed)
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=len(enumerate_multi_indices(n, k)))
    w = FormField(n, k, dict(zip(enumerate_multi_indices(n, k), (float(v) for v in vals))))
    assert fiber_norm_sq(w, g, np.zeros((1, n)))[0] > 0
    assert fiber_norm_sq(FormField(n, k, {}), g, np.zeros((1, n)))[0] == 0


def test_norm_euclidean_is_sum_of_squares():
    w = random_form(3, 2, 4)
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    assert np.allclose(fiber_norm_sq(w, MetricField.euclidean(3), pts), np.sum(w.values(pts) ** 2, axis=1))


# ---------------------------------------------------------------------------
# boundary parts


def test_boundary_part_examples():
    e2 = MetricField.euclidean(2, HALF2)
    pts = boundary_grid(HALF2, 9)
    parts = boundary_parts(FormField(2, 1, {(2,): 1}, HALF2), e2, pts)
    assert np.allclose(parts.normal[:, 1], 1.0) and np.allclose(parts.tangential, 0.0)
    parts = boundary_parts(FormField(2, 1, {(1,): "2*x1", (2,): "-2*x2"}, HALF2), e2, pts)
    assert np.allclose(parts.normal, 0.0)


def test_tangential_restrict_examples():
    w = FormField(2, 1, {(1,): "3*x1^2-3*x2^2", (2,): "-6*x1*x2"}, HALF2)
    r = tangential_restrict(w)
    assert r.n == 1 and r.k == 1
    for t in (-0.5, 0.2, 0.9):
        assert coeff(r, (1,), [t]) == pytest.approx(3 * t * t)
    top = tangential_restrict(FormField(2, 2, {(1, 2): 1}, HALF2))
    assert top.is_zero or top.indices == []


@given(st.integers(0, 10_000), st.integers(2, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_star_swaps_tangential_and_normal_parts(seed, nk):
    n, k = nk
    g = random_adapted_metric(n, seed)
    w = random_form(n, k, seed).replace(domain=g.domain)
    pts = boundary_grid(g.domain, 5)
    tw = boundary_parts(w, g, pts).tangential
    n_sw = boundary_parts(hodge_star(w, g), g, pts).normal
    assert np.allclose(star_values(tw, g.values(pts), k), n_sw, atol=1e-9)


def test_require_adapted_refuses():
    bad = MetricField.from_strings([["1", "x1/10"], ["x1/10", "1"]], 2, HALF2)
    with pytest.raises(ChartNotAdaptedError) as info:
        require_adapted(bad, boundary_grid(HALF2, 9))
    assert info.value.stage == "adaptation"


def test_tag_check():
    w = random_normal_zero_form(3, 2, seed=3)
    ok, _, worst = w.check_tag()
    assert ok and worst <= 1e-10
    bad = FormField(2, 1, {(2,): "1+x1"}, HALF2, "normal-zero")
    ok, where, worst = bad.check_tag()
    assert not ok and where["index"] == "2" and worst >= 1


# ---------------------------------------------------------------------------
# residual scans


def test_structural_residual_examples():
    e3 = MetricField.euclidean(3)
    w = FormField(3, 1, {(1,): "sin(x3)", (2,): "cos(x3)"})
    pts = np.random.default_rng(0).uniform(-3, 3, (100, 3))
    rep = structural_inequality_residual(w, e3, 1.0, pts)
    assert rep.passed and rep.worst_error <= 1e-10
    w2 = FormField(2, 1, {(1,): "x2"})
    rep = structural_inequality_residual(w2, MetricField.euclidean(2), 0.0, np.random.default_rng(1).uniform(-1, 1, (20, 2)))
    assert not rep.passed and rep.worst_error == pytest.approx(1.0)
    assert len(rep.worst_point) == 2


def test_harmonicity_examples():
    e2 = MetricField.euclidean(2)
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    d, c = harmonicity_residual(FormField(2, 1, {(1,): "2*x1", (2,): "-2*x2"}), e2, pts)
    assert d <= 1e-10 and c <= 1e-10
    ang = FormField(2, 1, {(1,): "-x2/(x1^2+x2^2)", (2,): "x1/(x1^2+x2^2)"})
    rad = np.random.default_rng(2).uniform(1, 2, 50)
    th = np.random.default_rng(3).uniform(0, 2 * np.pi, 50)
    d, c = harmonicity_residual(ang, e2, np.column_stack([rad * np.cos(th), rad * np.sin(th)]))
    assert d <= 1e-9 and c <= 1e-9
    d, c = harmonicity_residual(FormField(2, 1, {(1,): "x1"}), e2, pts)
    assert c == pytest.approx(1.0)
