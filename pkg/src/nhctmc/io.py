"""CSV and JSON writers for transition fields and reports."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

__all__ = ["write_field_csv", "read_field_csv", "write_json", "write_columns_csv", "fmt"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field_csv(path, times, field, labels=None):
    """One row per node: the time, then the matrix entries in row-major order."""
    field = np.asarray(field)
    n = field.shape[-1]
    labels = list(range(n)) if labels is None else list(labels)
    header = ["t"] + [f"P[{labels[i]}->{labels[j]}]" for i in range(n) for j in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, P in zip(times, field):
            w.writerow([fmt(t)] + [fmt(v) for v in P.ravel()])


def read_field_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    n = int(round(np.sqrt(data.shape[1] - 1)))
    return data[:, 0], data[:, 1:].reshape(-1, n, n)


def write_columns_csv(path, columns: dict):
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*columns.values()):
            w.writerow([fmt(v) for v in row])


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_default) + "\n")
