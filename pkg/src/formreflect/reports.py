"""Verifier reports and their JSON/CSV serialization."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Report:
    """Outcome of checking one identity: ``{identity, worst_point, worst_error, tolerance, pass}``."""

    identity: str
    worst_point: list | None
    worst_error: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "identity": self.identity,
            "worst_point": self.worst_point,
            "worst_error": self.worst_error,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }
        if self.detail:
            out["detail"] = self.detail
        return _plain(out)


def _plain(obj):
    """Convert numpy scalars/arrays to builtin types for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


def to_json(payload) -> str:
    if isinstance(payload, Report):
        payload = payload.to_dict()
    elif isinstance(payload, list) and payload and isinstance(payload[0], Report):
        payload = [r.to_dict() for r in payload]
    return json.dumps(_plain(payload), sort_keys=True, indent=2, allow_nan=True) + "\n"


def reports_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["identity", "pass", "worst_error", "tolerance", "worst_point"])
    for r in reports:
        point = "" if r.worst_point is None else " ".join(repr(float(v)) for v in r.worst_point)
        writer.writerow([r.identity, int(r.passed), repr(float(r.worst_error)), repr(float(r.tolerance)), point])
    return buf.getvalue()


def rows_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
