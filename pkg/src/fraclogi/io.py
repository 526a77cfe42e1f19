"""CSV / JSON writers.  Every float is written with 17 significant digits."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from fraclogi.grid import Grid


def float_text(x: float) -> str:
    """17 significant digits; integral values keep a decimal point so they read back as floats."""
    text = format(x, ".17g")
    return text if any(c in text for c in ".en") else text + ".0"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float_text(x)
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_columns(path, columns: dict) -> Path:
    """Write equal-length columns (a dict of sequences)."""
    header = list(columns)
    return write_csv(path, header, zip(*(columns[k] for k in header)))


def write_records(path, records: list[dict]) -> Path:
    """Write dict rows; the header is the union of keys in first-seen order."""
    header: list[str] = []
    for rec in records:
        header.extend(k for k in rec if k not in header)
    return write_csv(path, header, ([rec.get(k, "") for k in header] for rec in records))


def write_field(path, grid: Grid, values: np.ndarray, mask: np.ndarray | None = None) -> Path:
    """Nodal field as ``index,x[,y],value`` rows (interior nodes by default)."""
    mask = grid.interior if mask is None else np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    names = ["x", "y"][: grid.dimension]
    rows = ([int(i), *grid.coords[i], values[i]] for i in idx)
    return write_csv(path, ["index", *names, "value"], rows)


def read_field(path, grid: Grid) -> np.ndarray:
    u = grid.zeros()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            u[int(row["index"])] = float(row["value"])
    return u


def _dump(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_dump(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist(), indent, level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return float_text(x)
    if isinstance(obj, Path):
        return json.dumps(str(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with 17-significant-digit floats (Infinity/NaN as Python's json does)."""
    return _dump(obj, indent, 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path
