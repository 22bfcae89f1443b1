"""CSV readers and writers.

Floats are written with 17 significant digits so that 64-bit values survive
a round trip exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .exceptions import ConfigInvalid
from .var_model import Trajectory

__all__ = [
    "fmt",
    "write_rows",
    "read_rows",
    "write_trajectory",
    "read_trajectory",
    "write_matrix",
    "read_matrix",
    "write_evaluations",
    "write_quantile_table",
    "write_decision_report",
    "write_iterations",
]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_rows(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r if row]


def write_trajectory(traj: Trajectory, path) -> Path:
    header = [f"x{i}" for i in range(traj.p)]
    return write_rows(path, header, traj.samples)


def read_trajectory(path) -> Trajectory:
    header, rows = read_rows(path)
    if not all(h == f"x{i}" for i, h in enumerate(header)):
        raise ConfigInvalid(f"{path}: unexpected trajectory header {header[:3]}...")
    return Trajectory(np.array(rows, dtype=float).reshape(len(rows), len(header)))


def write_matrix(m: np.ndarray, path) -> Path:
    m = np.atleast_2d(m)
    return write_rows(path, [f"c{j}" for j in range(m.shape[1])], m)


def read_matrix(path) -> np.ndarray:
    header, rows = read_rows(path)
    return np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_evaluations(evaluations, path) -> Path:
    return write_rows(
        path,
        ["t", "statistic", "threshold", "ratio", "reject"],
        [(e.t, e.statistic, e.threshold, e.ratio, e.reject) for e in evaluations],
    )


def write_quantile_table(tables, path) -> Path:
    rows = []
    for table in tables:
        for t, q in zip(table.ts, table.quantiles):
            rows.append((t, table.source.value, table.alpha, table.sample_count, q))
    return write_rows(path, ["t", "source", "alpha", "S", "quantile"], rows)


def write_decision_report(result, path) -> Path:
    return write_rows(path, ["t", "g_stat", "q1", "q2", "reject"], result.report_rows())


def write_iterations(history, kkt_trace, path) -> Path:
    return write_rows(
        path,
        ["iter", "objective", "kkt_residual"],
        [(i, f, k) for i, (f, k) in enumerate(zip(history, kkt_trace))],
    )
