"""Deterministic serialization of run reports.

Numbers are written with 17 significant digits, enough to round-trip any
double exactly.  The JSON form carries the same table plus the summary,
the provenance and the config itself, so the config hash can be recomputed
from the file.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from ..errors import IoFailure
from .runner import MonteCarloResult, RunReport


def format_number(v: float) -> str:
    return format(float(v), ".17g")


def _plain(obj):
    """JSON-safe copy: arrays to lists, NaN/inf to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns())
    for row in report.table():
        w.writerow([format_number(v) for v in row])
    return buf.getvalue()


def report_json(report: RunReport) -> str:
    doc = {
        "columns": report.columns(),
        "records": [[None if not math.isfinite(v) else float(v) for v in row] for row in report.table()],
        "summary": report.summary,
        "provenance": report.provenance,
        "config": report.config,
        "step_metadata": report.step_metadata,
    }
    return json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n"


def summary_json(report: RunReport) -> str:
    return json.dumps(_plain({"summary": report.summary, "provenance": report.provenance,
                              "config": report.config}), indent=1, sort_keys=True) + "\n"


def monte_carlo_json(result: MonteCarloResult) -> str:
    doc = {
        "aggregate": result.aggregate,
        "failures": [{"replicate": i, "error": str(e)} for i, e in result.failures],
        "replicates": [None if r is None else {"summary": r.summary, "provenance": r.provenance}
                       for r in result.reports],
    }
    return json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n"


def _write(path, text: str) -> None:
    try:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_results(report: RunReport, fmt: str, path) -> None:
    """Write ``report`` as ``csv`` or ``json`` to ``path``."""
    if fmt == "csv":
        _write(path, report_csv(report))
    elif fmt == "json":
        _write(path, report_json(report))
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_results(path) -> tuple[list, np.ndarray]:
    """Parse an emitted CSV or JSON report back into ``(columns, table)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if str(path).endswith(".json"):
        doc = json.loads(text)
        cols = doc["columns"]
        rows = [[math.nan if v is None else v for v in r] for r in doc["records"]]
    else:
        reader = list(csv.reader(io.StringIO(text)))
        cols, rows = reader[0], [[float(v) for v in r] for r in reader[1:]]
    table = np.asarray(rows, dtype=float).reshape(len(rows), len(cols))
    return cols, table
