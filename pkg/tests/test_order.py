import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formreflect import expr as ex
from formreflect.chart import linear_map, pullback_form
from formreflect.errors import DomainError
from formreflect.expr import ChartDomain, ScalarField
from formreflect.forms import FormField
from formreflect.order import averaged_halfball_integral, compare_orders_under_reflection, estimate_order_1mean
from formreflect.reflection import reflect_form

BALL2 = ChartDomain(2, "ball", 1.0)
HALF2 = ChartDomain(2, "half-ball", 1.0)


def sf(text, dom=BALL2):
    return ScalarField(ex.parse_expression(text, dom.n), dom)


def test_averaged_integral_closed_forms():
    v, _ = averaged_halfball_integral(sf("1"), [0, 0], 0.3)
    assert v == pytest.approx(1.0, abs=1e-14)
    for r in (0.2, 0.7):
        v, e = averaged_halfball_integral(sf("sqrt(x1^2+x2^2)"), [0, 0], r)
        assert v == pytest.approx(2 * r / 3, rel=1e-4)
        v, e = averaged_halfball_integral(sf("x2", HALF2), [0, 0], r, half=True)
        assert v == pytest.approx(4 * r / (3 * math.pi), rel=1e-4)
        assert e < 1e-4


def test_ball_must_stay_inside():
    with pytest.raises(DomainError):
        averaged_halfball_integral(sf("1"), [0.9, 0], 0.2)
    with pytest.raises(DomainError):
        averaged_halfball_integral(sf("1", HALF2), [0, 0], 0.2)
    with pytest.raises(DomainError):
        averaged_halfball_integral(sf("1"), [0, 0], -0.1)


@pytest.mark.parametrize("m", [0, 1, 2, 3, 4])
def test_calibration_on_powers_of_the_norm(m):
    f = sf(f"sqrt(x1^2+x2^2)^{m}") if m else sf("1")
    rep = estimate_order_1mean(f, [0, 0])
    assert abs(rep.overall - m) <= 0.05


def test_order_examples():
    w = FormField(2, 1, {(1,): "x1^2+x2^2", (2,): "1"}, BALL2)
    rep = estimate_order_1mean(w, [0, 0])
    assert rep.coefficient("1").exponent == pytest.approx(2.0, abs=0.05)
    assert rep.coefficient("2").exponent == pytest.approx(0.0, abs=1e-12)
    assert rep.overall == pytest.approx(0.0, abs=1e-12)
    assert rep.coefficient("1").vanishes_to(2) and not rep.coefficient("2").vanishes_to(1)
    zero = estimate_order_1mean(FormField(2, 1, {}, BALL2), [0, 0])
    assert zero.verdict == "numerically zero" and zero.overall is None


@given(st.floats(0.01, 100.0), st.integers(0, 3))
@settings(max_examples=20)
def test_homogeneity_law(s, m):
    base = f"x1^{m}*(1+x2)" if m else "1+x2"
    a = estimate_order_1mean(sf(base), [0, 0])
    b = estimate_order_1mean(ScalarField(ex.mul(ex.const(s), ex.parse_expression(base, 2)), BALL2), [0, 0])
    shift = np.log(b.coefficients[0].averages) - np.log(a.coefficients[0].averages)
    assert np.allclose(shift, math.log(s), atol=1e-10)
    assert abs(a.overall - b.overall) <= 1e-10


@pytest.mark.parametrize("text", ["x1^2+x2^2", "x2^2", "x1^2*x2^2+x2^4", "cos(x1)*x2^2"])
def test_boundary_and_interior_agree_for_even_coefficients(text):
    ball = estimate_order_1mean(sf(text), [0, 0])
    half = estimate_order_1mean(sf(text, HALF2), [0, 0])
    assert half.half and not ball.half
    assert abs(half.overall - ball.overall) <= 0.05


def test_fit_needs_four_decreasing_radii():
    with pytest.raises(DomainError):
        estimate_order_1mean(sf("x1"), [0, 0], radii=(0.4, 0.2, 0.1))
    with pytest.raises(DomainError):
        estimate_order_1mean(sf("x1"), [0, 0], radii=(0.1, 0.2, 0.3, 0.4))


def test_fast_decay_reported_as_numerically_zero():
    rep = estimate_order_1mean(sf("x1^40"), [0, 0])
    assert rep.verdict == "numerically zero"


def test_order_ratios_under_reflection():
    w = FormField(2, 1, {(1,): "x1^2+x2^2", (2,): "x2"}, HALF2, "normal-zero")
    reps = compare_orders_under_reflection(w, reflect_form(w))
    assert all(r.passed for r in reps), [r.to_dict() for r in reps if not r.passed]
    ex_ = {r.identity: r.detail for r in reps}
    assert ex_["order-exponent[2]"]["half"] == pytest.approx(1.0, abs=0.05)
    assert ex_["order-exponent[2]"]["full"] == pytest.approx(1.0, abs=0.05)


def test_order_ratio_for_zero_form():
    w = FormField(2, 1, {}, HALF2, "normal-zero")
    reps = compare_orders_under_reflection(w, reflect_form(w))
    assert all(r.passed and r.detail["half"] == "numerically zero" for r in reps)


def test_exponent_unchanged_by_linear_chart_change():
    w = FormField(2, 1, {(1,): "x1*x2", (2,): "x1^2+x2^3"}, BALL2)
    A = np.array([[1.0, 0.3], [-0.2, 0.8]])
    moved = pullback_form(linear_map(A), w).replace(domain=ChartDomain(2, "ball", 0.5))
    a = estimate_order_1mean(w, [0, 0])
    b = estimate_order_1mean(moved, [0, 0], radii=(0.2, 0.1, 0.05, 0.025, 0.0125))
    assert abs(a.overall - b.overall) <= 0.05


def test_loglog_csv_and_dict():
    rep = estimate_order_1mean(sf("x1^2"), [0, 0])
    lines = rep.loglog_csv().strip().splitlines()
    assert lines[0] == "index,log_r,log_A" and len(lines) == 6
    d = rep.to_dict()
    assert d["verdict"] == "finite order" and len(d["coefficients"]) == 1
