"""CSV and JSON artifacts with fixed formatting.

CSV: UTF-8, comma separated, one header row, ``\\n`` line endings. Floats are
written with ``repr`` (shortest round-trip form), which uses scientific
notation below ``1e-4`` in magnitude; ints and strings are written verbatim.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

TRAJECTORY_FIXED = ("algorithm", "step", "reference", "update_time", "solve_time", "objective", "rank", "col_H",
                    "kkt_residual")
CONSISTENCY_SCHEMA = (("col_H", int), ("method", str), ("block", str), ("frobenius_error", float), ("seed", int))
EQUIVALENCE_SCHEMA = (("check", str), ("instances", int), ("max_deviation", float), ("threshold", float),
                      ("passed", str))
SVD_BENCH_SCHEMA = (("mode", str), ("step", int), ("col_H", int), ("sigma_rel_error", float),
                    ("gram_rel_error", float), ("orth_error", float), ("update_time", float))
TIMING_COLUMNS = ("update_time", "solve_time")


def trajectory_schema(n_u: int, n_y: int) -> tuple:
    cols = [("algorithm", str), ("step", int)]
    cols += [(f"u_{i}", float) for i in range(n_u)] + [(f"y_{i}", float) for i in range(n_y)]
    cols += [("reference", float), ("update_time", float), ("solve_time", float), ("objective", float),
             ("rank", int), ("col_H", int), ("kkt_residual", float)]
    return tuple(cols)


def format_value(v, kind) -> str:
    if kind is float:
        x = float(v)
        if math.isnan(x):
            return "nan"
        return repr(x)
    if kind is int:
        return str(int(v))
    return str(v)


def write_csv(records, schema, path) -> None:
    """Write ``records`` (sequences ordered like ``schema``) to ``path``."""
    path = Path(path)
    names = [n for n, _ in schema]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for rec in records:
                if len(rec) != len(schema):
                    raise ValueError(f"record has {len(rec)} fields, schema has {len(schema)}")
                w.writerow([format_value(v, kind) for v, (_, kind) in zip(rec, schema)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_csv(path, schema) -> list:
    """Inverse of :func:`write_csv`; checks the header against ``schema``."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = [n for n, _ in schema]
    if not rows or rows[0] != names:
        raise ValueError(f"{path}: header {rows[0] if rows else None} does not match {names}")
    return [tuple(kind(v) for v, (_, kind) in zip(r, schema)) for r in rows[1:]]


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    return str(o)
