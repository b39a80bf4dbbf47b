"""CSV and JSON artifacts that round-trip bit-exactly.

Floats are written with ``repr`` (shortest string that parses back to the
same double), so reading a file and writing it again reproduces it byte for
byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = ("tau", "t", "x1", "x2", "psi", "p1", "p2", "H", "c")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _parse(cell: str):
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def read_csv(path) -> tuple[list[str], list[list]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV file") from None
        rows = [[_parse(c) for c in row] for row in r]
    return header, rows


def write_trajectory(path, rows: np.ndarray) -> None:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != len(TRAJECTORY_COLUMNS):
        raise ValueError("trajectory rows must have one column per trajectory field")
    write_csv(path, TRAJECTORY_COLUMNS, rows.tolist())


def read_trajectory(path) -> dict[str, np.ndarray]:
    header, rows = read_csv(path)
    if tuple(header) != TRAJECTORY_COLUMNS:
        raise ValueError(f"{path}: expected trajectory columns {TRAJECTORY_COLUMNS}, got {tuple(header)}")
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj) -> None:
    """Non-finite floats become null so files stay strict JSON."""
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
