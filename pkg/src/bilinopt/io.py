"""File formats: dataset/trajectory CSV, deterministic JSON, JSONL, gnuplot.

Dataset CSV schema: header ``t,u_1..u_m,x_1..x_n``; row t holds x(t) and the
input applied at time t; the final row (t = L) has empty input cells and the
terminal state.  Floats are written with ``repr`` (shortest round-trip), so
write -> read -> write is byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .systems import Trajectory


class DatasetFormatError(ValueError):
    """A dataset file does not match the expected schema."""


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset_csv(path, traj: Trajectory) -> None:
    path = Path(path)
    m, n, L = traj.m, traj.n, traj.length
    header = (["t"] + [f"u_{j + 1}" for j in range(m)]
              + [f"x_{i + 1}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(L):
            w.writerow([t] + [_fmt(v) for v in traj.inputs[t]]
                       + [_fmt(v) for v in traj.states[t]])
        w.writerow([L] + [""] * m + [_fmt(v) for v in traj.states[L]])


def read_dataset_csv(path) -> Trajectory:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = rows[0]
    m = sum(1 for c in header if c.startswith("u_"))
    n = sum(1 for c in header if c.startswith("x_"))
    if header[:1] != ["t"] or m < 1 or n < 1 or len(header) != 1 + m + n:
        raise DatasetFormatError(
            f"{path}: bad header {header!r}, expected t,u_1..u_m,x_1..x_n")
    body = rows[1:]
    if len(body) < 2:
        raise DatasetFormatError(f"{path}: need at least 2 data rows, got {len(body)}")
    L = len(body) - 1
    inputs = np.empty((L, m))
    states = np.empty((L + 1, n))
    for r, row in enumerate(body):
        if len(row) != 1 + m + n:
            raise DatasetFormatError(
                f"{path}: row {r + 2} has {len(row)} cells, expected {1 + m + n}")
        try:
            if int(row[0]) != r:
                raise ValueError
        except ValueError:
            raise DatasetFormatError(
                f"{path}: row {r + 2} column 't' is {row[0]!r}, expected {r}")
        try:
            states[r] = [float(v) for v in row[1 + m:]]
            if r < L:
                inputs[r] = [float(v) for v in row[1:1 + m]]
            elif any(v != "" for v in row[1:1 + m]):
                raise DatasetFormatError(
                    f"{path}: final row must leave input cells empty")
        except DatasetFormatError:
            raise
        except ValueError as exc:
            raise DatasetFormatError(
                f"{path}: row {r + 2}: non-numeric cell ({exc})")
    return Trajectory(states, inputs)


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, fixed layout, trailing newline."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def write_trace_csv(path, trace) -> None:
    """Iteration trace: k, cost, violation, step_norm, subproblem_iters."""
    cols = ["k", "cost", "violation", "step_norm", "subproblem_iters"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in trace:
            w.writerow([row["k"], _fmt(row["cost"]), _fmt(row["violation"]),
                        _fmt(row["step_norm"]), row["subproblem_iters"]])


def write_gnuplot_dat(path, columns: dict[str, np.ndarray]) -> None:
    """Whitespace-delimited columns with a commented header line."""
    names = list(columns)
    data = [np.asarray(columns[k], dtype=float).reshape(-1) for k in names]
    length = len(data[0])
    if any(len(c) != length for c in data):
        raise ValueError("all columns must have equal length")
    with open(path, "w") as fh:
        fh.write("# " + " ".join(names) + "\n")
        for i in range(length):
            fh.write(" ".join(_fmt(c[i]) for c in data) + "\n")
