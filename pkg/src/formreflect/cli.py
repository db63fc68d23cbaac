"""Command-line front end: ``formreflect <command> [input] [options]``.

Exit codes: 0 when every report passes, 1 on a property failure or a
refusal, 2 on malformed input.  Output is written once, at the end, and is
byte-identical for identical inputs and seed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormReflectError, ParseError, ReflectionRefused, ShrinkRadiusError
from .expr import ChartDomain
from .forms import FormField, MetricField
from .reports import Report, reports_csv, rows_csv, to_json

STAGES = ("positive-definite", "det-inverse", "derivatives", "norms", "doubling", "c1-witness")


class InputError(Exception):
    """Malformed job input (exit code 2)."""


# ---------------------------------------------------------------------------
# input


def load_job(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError("input must be a JSON object")
    return data


def _need(data: dict, key: str):
    if key not in data:
        raise InputError(f"input is missing {key!r}")
    return data[key]


def parse_domain(data: dict, n: int) -> ChartDomain:
    spec = data.get("domain") or {"shape": "half-ball", "radius": 0.5}
    if not isinstance(spec, dict):
        raise InputError("'domain' must be an object")
    return ChartDomain(
        n,
        spec.get("shape", "half-ball"),
        float(spec.get("radius", 1.0)),
        spec.get("lower"),
        spec.get("upper"),
        float(spec.get("inner", 0.0)),
    )


def parse_metric(data: dict, n: int, domain=None) -> MetricField:
    rows = data.get("metric")
    if rows is None:
        return MetricField.euclidean(n, domain)
    if not isinstance(rows, list) or len(rows) != n or any(not isinstance(r, list) or len(r) != n for r in rows):
        raise InputError(f"'metric' must be an {n}x{n} array of expression strings")
    return MetricField.from_strings(rows, n, domain)


def parse_form(data: dict, n: int, domain=None) -> FormField:
    spec = _need(data, "form")
    if not isinstance(spec, dict) or "degree" not in spec:
        raise InputError("'form' must be an object with 'degree' and 'coeffs'")
    coeffs = spec.get("coeffs", {})
    if not isinstance(coeffs, dict):
        raise InputError("'form.coeffs' must map index labels to expressions")
    return FormField(n, int(spec["degree"]), coeffs, domain, data.get("boundary_tag"))


def parse_dimension(data: dict) -> int:
    n = _need(data, "n")
    if not isinstance(n, int) or n < 1:
        raise InputError("'n' must be a positive integer")
    return n


# ---------------------------------------------------------------------------
# commands; each returns (reports, data, data_csv)


def cmd_verify_reflection(args) -> tuple:
    from .reflection import c1_failure_witness, reflect_form, run_reflection_chain

    data = load_job(args.input)
    n = parse_dimension(data)
    domain = parse_domain(data, n)
    g = parse_metric(data, n, domain)
    w = parse_form(data, n, domain)
    stages = args.stage or None
    chain_stages = [s for s in stages if s != "c1-witness"] if stages else None
    reports = []
    if chain_stages is None or chain_stages:
        reports += run_reflection_chain(
            g,
            w,
            C=args.C,
            samples=args.samples or 50,
            seed=args.seed,
            nodes=args.nodes,
            stages=chain_stages,
            tol=args.tol,
        )
    if stages and "c1-witness" in stages:
        try:
            reports.append(c1_failure_witness(reflect_form(w, g=g)))
        except ReflectionRefused as exc:
            reports.append(Report(exc.stage, exc.worst_point, exc.worst_error or 0.0, 1e-10, False, {"message": str(exc)}))
    return reports, {"n": n, "domain": domain.to_dict(), "form": w.to_dict()}, None


def cmd_adapt_chart(args) -> tuple:
    from .chart import BoundaryPatch, build_adapted_chart

    data = load_job(args.input)
    n = parse_dimension(data)
    g = parse_metric(data, n)
    pspec = _need(data, "patch")
    patch = BoundaryPatch.from_strings(_need(pspec, "components"), _need(pspec, "base"), pspec.get("inward"))
    radius = float(data.get("radius", 0.5))
    tol = args.tol if args.tol is not None else 1e-8
    try:
        chart = build_adapted_chart(g, patch, radius, strict=not args.shrink)
    except ShrinkRadiusError as exc:
        rep = Report("chart-radius", None, radius, exc.suggested_radius, False, {"suggested_radius": exc.suggested_radius})
        return [rep], {"radius": radius}, None
    props = chart.check_properties(args.samples or 21)
    reports = [
        Report("identity-at-base", [0.0] * n, props["identity-at-base"], tol, props["identity-at-base"] <= tol, {}),
        Report("base-to-origin", [0.0] * n, props["base-to-origin"], tol, props["base-to-origin"] <= tol, {}),
        Report(
            "normal-row-on-boundary",
            props["normal-row-worst-point"],
            props["normal-row-on-boundary"],
            tol,
            props["normal-row-on-boundary"] <= tol,
            {"samples": props["boundary-samples"]},
        ),
    ]
    payload = {"radius": chart.radius, "map": chart.map.to_strings(), "base_point": list(chart.base_point)}
    return reports, payload, None


def cmd_order(args) -> tuple:
    from .order import DEFAULT_RADII, compare_orders_under_reflection, estimate_order_1mean
    from .reflection import reflect_form

    data = load_job(args.input)
    n = parse_dimension(data)
    domain = parse_domain(data, n)
    w = parse_form(data, n, domain)
    p = np.asarray(args.point if args.point else data.get("point", [0.0] * n), dtype=float)
    if len(p) != n:
        raise InputError(f"point must have {n} coordinates")
    radii = args.radii or data.get("radii") or DEFAULT_RADII
    nodes = args.samples or 2**15
    rep = estimate_order_1mean(w, p, radii, nodes=nodes, seed=args.seed)
    fit_tol = args.tol if args.tol is not None else 0.05
    reports = []
    for c in rep.coefficients:
        # informational unless --min-order asks for "vanishes to order >= m"
        m = args.min_order
        passed = True if m is None else c.vanishes_to(m, fit_tol)
        reports.append(
            Report(
                f"order[{c.index}]",
                rep.point,
                float("inf") if c.exponent is None else c.exponent,
                0.0 if m is None else m - fit_tol,
                bool(passed),
                {"verdict": c.verdict, "band": c.band},
            )
        )
    if rep.half and w.tag == "normal-zero":
        g = parse_metric(data, n, domain)
        wt = reflect_form(w, g=g)
        reports += compare_orders_under_reflection(w, wt, p, radii, nodes=nodes, seed=args.seed)
    return reports, rep.to_dict(), rep.loglog_csv()


def cmd_zeros(args) -> tuple:
    from .zeros import box_dimension, catalogue_entry, verify_cloud, zero_cloud

    if args.entry:
        entry = catalogue_entry(args.entry)
        target, metric, domain = entry, None, entry.domain
        claim = entry.expected.get("dimension")
        reports = entry.check()
    else:
        if not args.input:
            raise InputError("zeros needs --entry or an input file")
        data = load_job(args.input)
        n = parse_dimension(data)
        domain = parse_domain(data, n)
        metric = parse_metric(data, n, domain)
        target = parse_form(data, n, domain)
        claim = data.get("expected_dimension", max(n - 2, 0))
        reports = []
    tol = args.tol if args.tol is not None else 1e-9
    per_axis = args.samples or (48 if domain.n == 3 else 41)
    cloud = zero_cloud(target, domain, per_axis=per_axis, tol=tol, metric=metric, seed=args.seed)
    reports.append(verify_cloud(cloud, target, metric))
    box = box_dimension(cloud)
    if box.dimension is not None and claim is not None:
        bound = claim + args.dim_slack
        reports.append(Report("box-dimension-bound", None, box.dimension, bound, box.dimension <= bound, {"claim": claim}))
    payload = {"cloud": cloud.to_dict(), "box": box.to_dict(), "labels": sorted(set(cloud.labels))}
    return reports, payload, cloud.to_csv() + "\n" + box.to_csv()


def cmd_jets(args) -> tuple:
    from .zeros import catalogue_entry, direct_jets, infinite_order_probe

    if args.entry:
        entry = catalogue_entry(args.entry)
        gamma, g = entry.form, entry.metric
        p = np.zeros(entry.n)
    else:
        if not args.input:
            raise InputError("jets needs --entry or an input file")
        data = load_job(args.input)
        n = parse_dimension(data)
        domain = parse_domain(data, n)
        g = parse_metric(data, n, domain)
        gamma = parse_form(data, n, domain)
        p = np.asarray(args.point if args.point else data.get("point", [0.0] * n), dtype=float)
    M = args.order
    probe = infinite_order_probe(gamma, g, p, M)
    table = probe.pop("table")
    direct = direct_jets(gamma, p, M)
    if table.exact:
        gaps = [0.0 if table.values[k] == direct[k] else abs(float(table.values[k] - direct[k])) for k in direct]
    else:
        gaps = [abs(table.values[k] - direct[k]) for k in direct]
    worst = max(gaps) if gaps else 0.0
    tol = 0.0 if table.exact else (args.tol if args.tol is not None else 1e-9)
    reports = [
        Report("jets-match-direct-differentiation", list(table.point), worst, tol, worst <= tol, {"exact": table.exact}),
    ]
    rows = [(e["index"], " ".join(map(str, e["alpha"])), e["value"], e["provenance"]) for e in table.to_dict()["entries"]]
    return reports, {"probe": probe, "table": table.to_dict()}, rows_csv(("index", "alpha", "value", "provenance"), rows)


COMMANDS = {
    "verify-reflection": cmd_verify_reflection,
    "adapt-chart": cmd_adapt_chart,
    "order": cmd_order,
    "zeros": cmd_zeros,
    "jets": cmd_jets,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formreflect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("input", help="job file (JSON)")
        else:
            p.add_argument("input", nargs="?", help="job file (JSON)")
        p.add_argument("--tol", type=float, default=None, help="override the command's main tolerance")
        p.add_argument("--samples", type=int, default=None, help="sample count (meaning depends on the command)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--data-csv", default=None, help="also write the command's data table as CSV")
        return p

    p = common(sub.add_parser("verify-reflection", help="reflect metric and form, run every identity check"))
    p.add_argument("--stage", action="append", choices=STAGES, help="run only the given stage (repeatable)")
    p.add_argument("--C", type=float, default=None, help="structural constant (fitted when omitted)")
    p.add_argument("--nodes", type=int, default=2**17, help="quadrature nodes for the doubling check")

    p = common(sub.add_parser("adapt-chart", help="build an adapted boundary chart and check its properties"))
    p.add_argument("--shrink", action="store_true", help="shrink an invalid radius instead of failing")

    p = common(sub.add_parser("order", help="vanishing order in 1-mean at a point"))
    p.add_argument("--point", type=float, nargs="+", default=None)
    p.add_argument("--radii", type=float, nargs="+", default=None)
    p.add_argument("--min-order", type=float, default=None, help="require every coefficient to vanish to this order")

    p = common(sub.add_parser("zeros", help="zero cloud and box-counting dimension"), needs_input=False)
    p.add_argument("--entry", default=None, help="catalogue entry label (a..e) or name")
    p.add_argument("--dim-slack", type=float, default=0.15, help="allowed excess of the fitted dimension")

    p = common(sub.add_parser("jets", help="normal-jet recovery and first nonvanishing order"), needs_input=False)
    p.add_argument("--entry", default=None, help="catalogue entry label (a..e) or name")
    p.add_argument("--order", type=int, default=3, help="maximal total order M")
    p.add_argument("--point", type=float, nargs="+", default=None)
    return parser


def render(command: str, reports: list, payload, fmt: str) -> str:
    if fmt == "csv":
        return reports_csv(reports)
    return to_json(
        {
            "command": command,
            "pass": all(r.passed for r in reports),
            "reports": [r.to_dict() for r in reports],
            "data": payload,
        }
    )


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        reports, payload, table = COMMANDS[args.command](args)
    except (InputError, ParseError) as exc:
        sys.stderr.write(f"input error: {exc}\n")
        return 2
    except ReflectionRefused as exc:
        reports = [Report(exc.stage, exc.worst_point, exc.worst_error or 0.0, 1e-10, False, {"message": str(exc), **(exc.detail or {})})]
        payload, table = None, None
    except (FormReflectError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"input error: {exc}\n")
        return 2
    _emit(render(args.command, reports, payload, args.format), args.out)
    if args.data_csv and table is not None:
        Path(args.data_csv).write_text(table)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
