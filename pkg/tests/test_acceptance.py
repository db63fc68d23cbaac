"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import io
import math
import time
from contextlib import redirect_stdout
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from formreflect import expr as ex
from formreflect.chart import BoundaryPatch, build_adapted_chart
from formreflect.cli import main
from formreflect.errors import ChartNotAdaptedError, TraceMismatchError
from formreflect.expr import ChartDomain, ScalarField
from formreflect.forms import FormField, MetricField
from formreflect.generators import random_adapted_metric, random_harmonic_differential, random_normal_zero_form
from formreflect.order import compare_orders_under_reflection, estimate_order_1mean
from formreflect.reflection import c1_failure_witness, reflect_form, reflect_metric, run_reflection_chain
from formreflect.zeros import (
    box_dimension,
    catalogue_entry,
    direct_jets,
    dual_dirichlet_check,
    infinite_order_probe,
    normal_jet_recovery,
    verify_cloud,
    zero_cloud,
)

JOBS = Path(__file__).resolve().parent.parent / "jobs"


@pytest.fixture
def verdict(capsys):
    def emit(number, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'}: {name} {detail}".rstrip())
        assert ok, detail

    return emit


def test_criterion_1_proof_chain(verdict):
    start = time.perf_counter()
    failures, runs = [], 0
    for mi in range(10):
        n = (2, 3, 4)[mi % 3]
        g = random_adapted_metric(n, seed=100 + mi)
        for fi in range(10):
            w = random_normal_zero_form(n, 1 + fi % n, seed=1000 * mi + fi)
            reports = run_reflection_chain(g, w, seed=fi)
            stages = {r.identity.split("[")[0] for r in reports}
            assert {"sylvester-minors", "det-identity", "inverse-sign-pattern", "d-parity", "dstar-parity",
                    "codifferential-norm-transfer", "structural-residual-transfer", "integral-doubling"} <= stages
            failures += [(mi, fi, r.identity, r.worst_error, r.tolerance) for r in reports if not r.passed]
            runs += 1
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    verdict(1, "reflection proof chain", ok, f"({runs} metric/form pairs, {len(failures)} failures, {elapsed:.1f}s) {failures[:3]}")


def _counterexamples():
    h2 = ChartDomain(2, "half-ball", 0.5)
    h3 = ChartDomain(3, "half-ball", 0.5)
    e2, e3 = MetricField.euclidean(2, h2), MetricField.euclidean(3, h3)
    ok2 = FormField(2, 1, {(1,): "x1"}, h2, "normal-zero")
    ok3 = FormField(3, 1, {(1,): "x1"}, h3, "normal-zero")
    return [
        ("mixed entry nonzero on boundary", MetricField.from_strings([["1", "x1/10"], ["x1/10", "1"]], 2, h2), ok2, "adaptation"),
        ("normal entry not 1 on boundary", MetricField.from_strings([["1", "0"], ["0", "1+x1^2/10"]], 2, h2), ok2, "adaptation"),
        (
            "n=3 mixed entry",
            MetricField.from_strings([["1", "0", "x2/5"], ["0", "1", "0"], ["x2/5", "0", "1"]], 3, h3),
            ok3,
            "adaptation",
        ),
        ("constant normal coefficient", e2, FormField(2, 1, {(2,): "1"}, h2, "normal-zero"), "trace-matching"),
        ("2-form with normal trace", e3, FormField(3, 2, {(1, 3): "x1", (1, 2): "x3"}, h3, "normal-zero"), "trace-matching"),
        (
            "tangential-zero form with tangential trace",
            e2,
            FormField(2, 1, {(1,): "1+x1", (2,): "x2"}, h2, "tangential-zero"),
            "trace-matching",
        ),
    ]


def test_criterion_2_refusals(verdict):
    wrong = []
    for name, g, w, stage in _counterexamples():
        reports = run_reflection_chain(g, w, nodes=2**12)
        if not (len(reports) == 1 and reports[0].identity == stage and not reports[0].passed):
            wrong.append(name)
        expected = ChartNotAdaptedError if stage == "adaptation" else TraceMismatchError
        try:
            reflect_metric(g)
            reflect_form(w, g=g)
            wrong.append(name + " (no exception)")
        except expected as exc:
            if exc.stage != stage:
                wrong.append(name + f" (stage {exc.stage})")
    verdict(2, "refusal suite", not wrong and len(_counterexamples()) == 6, f"(6 counterexamples) {wrong}")


def test_criterion_3_c1_witness(verdict):
    entry = catalogue_entry("b")
    rep = c1_failure_witness(reflect_form(entry.form))
    ratio = rep.worst_error / (rep.tolerance / 10)
    verdict(3, "one-sided normal derivatives differ", rep.passed, f"(entry b, coefficient {rep.detail['index']}, jump {rep.worst_error:.3g} = {ratio:.3g}x stencil tolerance)")


def _rational(v):
    q = Fraction(v).limit_denominator(1000)
    return f"({q.numerator}/{q.denominator})"


def _perturbed_metric(k):
    a, b, c = (_rational(v) for v in ((k + 1) / 20, (k - 2) / 15, (3 - k) / 25))
    return MetricField.from_strings(
        [[f"1+{a}*x1^2+{c}*x2", f"{b}*x1*x2+{c}*x1"], [f"{b}*x1*x2+{c}*x1", f"1+{b}*x2^2+{a}*sin(x1)"]], 2
    )


def test_criterion_4_adapted_charts(verdict):
    worst, cases = 0.0, 0
    patches = {
        "flat": BoundaryPatch.flat(2),
        "curved": BoundaryPatch.from_strings(["x1", "x1^2/10 - x1^3/20"], [0.0]),
    }
    for k in range(5):
        g = _perturbed_metric(k)
        for name, patch in patches.items():
            chart = build_adapted_chart(g, patch, 0.4)
            props = chart.check_properties(21)
            assert props["boundary-samples"] == 21
            worst = max(worst, props["identity-at-base"], props["base-to-origin"], props["normal-row-on-boundary"])
            cases += 1
    verdict(4, "adapted chart properties", worst <= 1e-8 and cases == 10, f"({cases} charts, worst error {worst:.2e})")


def test_criterion_5_order_calibration(verdict):
    ball = ChartDomain(2, "ball", 1.0)
    calib = []
    for m in range(5):
        text = f"sqrt(x1^2+x2^2)^{m}" if m else "1"
        rep = estimate_order_1mean(ScalarField(ex.parse_expression(text, 2), ball), [0, 0])
        calib.append(abs(rep.overall - m))
    bad = []
    for s in range(5):
        n = 2 + s % 2
        w = random_normal_zero_form(n, 1, seed=500 + s)
        for r in compare_orders_under_reflection(w, reflect_form(w)):
            if r.identity.startswith("order-ratio") and not r.passed:
                bad.append((s, r.identity, r.worst_error, r.tolerance))
    ok = max(calib) <= 0.05 and not bad
    verdict(5, "order calibration and transfer", ok, f"(max |m_hat - m| = {max(calib):.3g}, ratio failures {bad})")


def _wrap(v):
    return (v + math.pi) % (2 * math.pi) - math.pi


def test_criterion_6_torus_eigenfield(verdict):
    start = time.perf_counter()
    entry = catalogue_entry("a")
    residual = max(r.worst_error for r in entry.check(1e-9))
    cloud = zero_cloud(entry, per_axis=48)
    x1, x3 = cloud.points[:, 0], cloud.points[:, 2]
    d1 = np.hypot(_wrap(x1 - math.pi / 2), _wrap(x3 - math.pi))
    d2 = np.hypot(_wrap(x1 - 3 * math.pi / 2), _wrap(x3))
    dist = float(np.max(np.minimum(d1, d2))) if len(cloud) else float("inf")
    both = len(cloud) and np.any(d1 < 1e-6) and np.any(d2 < 1e-6)
    dim = box_dimension(cloud).dimension
    elapsed = time.perf_counter() - start
    ok = residual <= 1e-9 and dist <= 1e-6 and both and dim <= 1.15 and elapsed < 60 and verify_cloud(cloud, entry).passed
    verdict(6, "zero set of the torus eigenfield", ok,
            f"(residual {residual:.1e}, {len(cloud)} points, max distance {dist:.1e}, d_hat {dim:.3f}, {elapsed:.1f}s)")


def test_criterion_7_half_disk(verdict):
    entry = catalogue_entry("c")
    residual = max(r.worst_error for r in entry.check(1e-9))
    cloud = zero_cloud(entry)
    dim = box_dimension(cloud).dimension
    dual = dual_dirichlet_check(entry)
    ok = (
        residual <= 1e-9
        and len(cloud) == 1
        and cloud.labels == ["boundary"]
        and np.linalg.norm(cloud.points[0]) <= 1e-6
        and dim <= 0.1
        and all(r.passed for r in dual)
    )
    verdict(7, "half-disk harmonic form", ok, f"(residual {residual:.1e}, cloud {cloud.points.tolist()}, d_hat {dim:.3f}, dual {[r.passed for r in dual]})")


def _direct_first_order(direct):
    nonzero = [sum(alpha) for (_, alpha), v in direct.items() if v != 0]
    return min(nonzero) if nonzero else None


def test_criterion_8_jet_recovery(verdict):
    cases = [(catalogue_entry("e").form, catalogue_entry("e").metric)]
    cases += [random_harmonic_differential(2 + s % 2, seed=s) for s in range(10)]
    bad = []
    for i, (gamma, g) in enumerate(cases):
        table = normal_jet_recovery(gamma, g, None, 3)
        direct = direct_jets(gamma, None, 3)
        probe = infinite_order_probe(gamma, g, None, 3)
        if not table.exact or table.values != direct:
            bad.append((i, "table"))
        if probe.get("order") != _direct_first_order(direct):
            bad.append((i, "order"))
    verdict(8, "normal-jet recovery", not bad, f"({len(cases)} inputs, exact rational match, mismatches {bad})")


def _cli(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


def test_criterion_9_cli_determinism(verdict):
    commands = [
        ["verify-reflection", str(JOBS / "admissible.json"), "--seed", "3"],
        ["verify-reflection", str(JOBS / "admissible.json"), "--seed", "3", "--format", "csv"],
        ["adapt-chart", str(JOBS / "curved_chart.json")],
        ["order", str(JOBS / "order_x2.json"), "--seed", "5"],
        ["zeros", "--entry", "a", "--seed", "2"],
        ["zeros", "--entry", "c"],
        ["jets", "--entry", "e"],
        ["jets", str(JOBS / "cubic.json"), "--order", "4"],
    ]
    differ = []
    for argv in commands:
        first, second = _cli(argv), _cli(argv)
        if first != second or not first[1]:
            differ.append(" ".join(argv[:2]))
    verdict(9, "CLI determinism", not differ, f"({len(commands)} commands rerun, differing: {differ})")
