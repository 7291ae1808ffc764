"""Reading and writing run traces as self-describing CSV files.

A file starts with ``# key=value`` header lines (the trace's scalar fields,
every ``NoisePlan`` field under ``plan.``, and provenance under ``meta.``),
then a column row and one data row per iterate ``t = 0..T``.  The per-step
columns ``max_sample_grad`` and ``clip_count`` are empty on the final row.
Floats are written with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import InputError, TraceFormatError
from ..optimizer import RunTrace
from ..privacy import NoisePlan

FORMAT = "dpsosp-trace-1"
BASE_COLUMNS = ["t", "f", "grad_norm", "max_sample_grad", "clip_count"]
COORD_LIMIT = 50


def write_trace(trace: RunTrace, path, coords: Optional[bool] = None) -> Path:
    """Write ``trace`` to ``path``; coordinates default to on for ``d <= 50``."""
    path = Path(path)
    d = None if trace.points is None else trace.points.shape[1]
    if coords is None:
        coords = trace.points is not None and d <= COORD_LIMIT
    if coords and trace.points is None:
        raise InputError("trace has no coordinates to write")
    header = {"format": FORMAT, "seed": trace.seed, "mode": trace.mode,
              "exited_ball": trace.exited_ball, "digest": trace.digest,
              "coords": int(bool(coords)), "dim": "" if d is None else d}
    for key, value in trace.plan.flat().items():
        header[f"plan.{key}"] = value
    for key, value in trace.meta.items():
        header[f"meta.{key}"] = value
    T = trace.iterations
    columns = BASE_COLUMNS + ([f"x_{j}" for j in range(d)] if coords else [])
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={_text(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for t in range(T + 1):
            row = [t, repr(float(trace.objective[t])), repr(float(trace.grad_norm[t]))]
            if t < T:
                row += [repr(float(trace.max_sample_grad[t])), int(trace.clip_events[t])]
            else:
                row += ["", ""]
            if coords:
                row += [repr(float(v)) for v in trace.points[t]]
            writer.writerow(row)
    return path


def _text(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_trace(path) -> RunTrace:
    """Inverse of :func:`write_trace`; malformed input raises ``TraceFormatError``."""
    path = Path(path)
    header = {}
    with path.open(encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    row_no = 0
    while row_no < len(lines) and lines[row_no].startswith("#"):
        body = lines[row_no][1:].strip()
        if "=" not in body:
            raise TraceFormatError("header line without '='", row_no + 1)
        key, value = body.split("=", 1)
        header[key.strip()] = value
        row_no += 1
    if header.get("format") != FORMAT:
        raise TraceFormatError(f"not a {FORMAT} file", 1)
    if row_no >= len(lines):
        raise TraceFormatError("missing column row", row_no + 1)
    rows = list(csv.reader(lines[row_no:]))
    columns = rows[0]
    coords = header.get("coords") == "1"
    try:
        d = int(header["dim"]) if header.get("dim") else 0
    except ValueError:
        raise TraceFormatError("bad dim header", None) from None
    expected = BASE_COLUMNS + ([f"x_{j}" for j in range(d)] if coords else [])
    if columns != expected:
        raise TraceFormatError(f"expected columns {expected}", row_no + 1)
    data = rows[1:]
    if not data:
        raise TraceFormatError("no data rows", row_no + 2)
    T = len(data) - 1
    objective = np.empty(T + 1)
    grad_norm = np.empty(T + 1)
    max_sample = np.empty(T)
    clips = np.zeros(T, dtype=np.int64)
    points = np.empty((T + 1, d)) if coords else None
    for t, row in enumerate(data):
        line = row_no + 2 + t
        if len(row) != len(columns):
            raise TraceFormatError(f"expected {len(columns)} columns, found {len(row)}", line)
        try:
            if int(row[0]) != t:
                raise TraceFormatError(f"expected t={t}", line)
            objective[t] = float(row[1])
            grad_norm[t] = float(row[2])
            if t < T:
                max_sample[t] = float(row[3])
                clips[t] = int(row[4])
            elif row[3] or row[4]:
                raise TraceFormatError("final row must leave per-step columns empty", line)
            if coords:
                points[t] = [float(v) for v in row[5:]]
        except ValueError as exc:
            raise TraceFormatError(f"bad number: {exc}", line) from None
    plan_items = {k[5:]: v for k, v in header.items() if k.startswith("plan.")}
    try:
        plan = NoisePlan.from_flat(plan_items)
        seed = int(header["seed"])
    except (InputError, KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"bad header: {exc}", 1) from None
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    return RunTrace(points=points, objective=objective, grad_norm=grad_norm, clip_events=clips,
                    max_sample_grad=max_sample, exited_ball=header.get("exited_ball") == "True",
                    plan=plan, seed=seed, mode=header.get("mode", "no-clip"),
                    digest=header.get("digest", ""), meta=meta)


def traces_equal(a: RunTrace, b: RunTrace) -> bool:
    """Field-for-field equality of everything the file format stores."""
    def same(x, y):
        if x is None or y is None:
            return x is None and y is None
        return np.array_equal(x, y)

    return (same(a.points, b.points) and same(a.objective, b.objective) and same(a.grad_norm, b.grad_norm)
            and same(a.clip_events, b.clip_events) and same(a.max_sample_grad, b.max_sample_grad)
            and a.exited_ball == b.exited_ball and a.plan == b.plan and a.seed == b.seed
            and a.mode == b.mode and a.digest == b.digest
            and {k: str(v) for k, v in a.meta.items()} == {k: str(v) for k, v in b.meta.items()})
