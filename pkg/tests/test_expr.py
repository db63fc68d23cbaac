import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from formreflect import expr as ex
from formreflect.errors import DomainError, ParseError, StencilError
from formreflect.expr import ChartDomain, ScalarField, compose_reflection, finite_diff_partial, parse_expression
from formreflect.generators import random_poly


def test_evaluation_examples():
    assert ex.evaluate_expr(parse_expression("x1^2+x2", 2), [2.0, 1.0]) == pytest.approx(5.0)
    assert ex.evaluate_expr(parse_expression("sgn(x2)*x1", 2), [3.0, 0.0]) == pytest.approx(3.0)
    assert ex.evaluate_expr(parse_expression("abs(x2)", 2), [0.0, -0.5]) == pytest.approx(0.5)


def test_parse_errors_carry_position():
    with pytest.raises(ParseError) as info:
        parse_expression("x1 + * x2", 2)
    assert info.value.position is not None
    with pytest.raises(ParseError):
        parse_expression("x3", 2)
    with pytest.raises(ParseError):
        parse_expression("foo(x1)", 2)


def test_exact_evaluation_is_rational():
    e = parse_expression("x1^2/3 - x2/7", 2)
    from fractions import Fraction

    assert ex.evaluate_exact(e, [Fraction(1), Fraction(1)]) == Fraction(1, 3) - Fraction(1, 7)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_string_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    e = random_poly(rng, n, 3, trig=True)
    back = parse_expression(ex.to_string(e), n)
    pts = rng.uniform(-1, 1, (10, n))
    assert np.allclose(ex.evaluate_expr(back, pts), ex.evaluate_expr(e, pts), atol=1e-13, rtol=1e-13)


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_derivative_matches_central_difference(seed, n):
    rng = np.random.default_rng(seed)
    e = random_poly(rng, n, 3, trig=True)
    p = rng.uniform(-0.8, 0.8, n)
    for i in range(1, n + 1):
        exact = float(ex.evaluate_expr(ex.derivative(e, i), p))
        assert finite_diff_partial(e, i, p, h=1e-5) == pytest.approx(exact, abs=1e-7)


def test_central_difference_is_second_order():
    f = parse_expression("sin(x1)*exp(x1)", 1)
    exact = float(ex.evaluate_expr(ex.derivative(f, 1), [0.3]))
    e1 = abs(finite_diff_partial(f, 1, [0.3], h=1e-2) - exact)
    e2 = abs(finite_diff_partial(f, 1, [0.3], h=5e-3) - exact)
    assert 3.5 < e1 / e2 < 4.5


@given(st.integers(0, 10_000))
def test_mixed_partials_commute(seed):
    rng = np.random.default_rng(seed)
    e = random_poly(rng, 3, 4, trig=True)
    pts = rng.uniform(-1, 1, (5, 3))
    a = ex.evaluate_expr(ex.derivative(ex.derivative(e, 1), 3), pts)
    b = ex.evaluate_expr(ex.derivative(ex.derivative(e, 3), 1), pts)
    assert np.allclose(a, b, atol=1e-12)


@given(st.integers(0, 10_000), st.booleans())
def test_compose_reflection_restriction_and_parity(seed, flip):
    rng = np.random.default_rng(seed)
    dom = ChartDomain(2, "half-ball", 1.0)
    f = ScalarField(random_poly(rng, 2, 3, trig=True), dom)
    ft = compose_reflection(f, flip)
    assert ft.domain.shape == "ball"
    x1 = rng.uniform(-0.5, 0.5, 50)
    t = rng.uniform(1e-6, 0.5, 50)
    up = np.column_stack([x1, t])
    down = np.column_stack([x1, -t])
    assert np.allclose(ft.evaluate(up), f.evaluate(up), atol=1e-14)
    sign = -1.0 if flip else 1.0
    assert np.allclose(ft.evaluate(down), sign * ft.evaluate(up), atol=1e-12)


def test_sign_of_zero_is_plus_one():
    s = parse_expression("sgn(x1)", 1)
    assert ex.evaluate_expr(s, [0.0]) == 1.0


def test_one_sided_stencils():
    a = parse_expression("abs(x1)", 1)
    assert finite_diff_partial(a, 1, [0.0], stencil="forward") == pytest.approx(1.0)
    assert finite_diff_partial(a, 1, [0.0], stencil="backward") == pytest.approx(-1.0)
    assert finite_diff_partial(parse_expression("x1^2", 1), 1, [1.0]) == pytest.approx(2.0, abs=1e-7)
    assert finite_diff_partial(parse_expression("sin(x1)", 1), 1, [0.0]) == pytest.approx(1.0, abs=1e-8)


def test_stencil_leaving_domain_names_side():
    f = ScalarField(parse_expression("x2", 2), ChartDomain(2, "half-ball", 1.0))
    with pytest.raises(StencilError) as info:
        finite_diff_partial(f, 2, [0.0, 0.0])
    assert info.value.side == "backward"
    assert finite_diff_partial(f, 2, [0.0, 0.0], stencil="forward") == pytest.approx(1.0)


def test_domain_checks():
    dom = ChartDomain(2, "half-ball", 1.0)
    f = ScalarField(parse_expression("x1", 2), dom)
    with pytest.raises(DomainError):
        f.evaluate([0.0, -0.1])
    with pytest.raises(DomainError):
        compose_reflection(ScalarField(parse_expression("x1", 2), ChartDomain(2, "ball")), False)
    assert dom.on_boundary([0.3, 0.0])
    assert not dom.on_boundary([0.3, 0.1])


def test_pi_and_functions():
    e = parse_expression("sin(pi/2) + sqrt(4) + exp(0)", 1)
    assert ex.evaluate_expr(e, [0.0]) == pytest.approx(4.0)
    assert math.isclose(ex.evaluate_expr(parse_expression("cos(x1)", 1), [math.pi]), -1.0)
