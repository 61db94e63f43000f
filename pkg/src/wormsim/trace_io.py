"""CSV emission and parsing for simulation traces.

Values are printed with 12 significant digits, enough that parsing an
emitted trace recovers every value to printed precision and that equal
runs produce byte-identical files.
"""

from __future__ import annotations

import numpy as np

from .composition import SimTrace
from .errors import InputError


def emit_trace(trace: SimTrace, path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(trace.columns) + "\n")
        cols = [trace.data[c] for c in trace.columns]
        for k in range(trace.n_rows):
            fh.write(",".join(f"{col[k]:.12g}" for col in cols) + "\n")


def read_trace(path: str, dt: float = None, meta: dict = None) -> SimTrace:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise InputError(f"{path}: empty trace file")
        columns = header.split(",")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape[1] != len(columns):
        raise InputError(f"{path}: column count mismatch")
    data = {c: rows[:, i].copy() for i, c in enumerate(columns)}
    if dt is None:
        t = data["t"]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return SimTrace(columns, data, dt, events=[], meta=meta or {})
