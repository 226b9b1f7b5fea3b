"""CSV and JSON-lines helpers shared by the library exports and the CLI."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(x) -> str:
    """Format a number with 17 significant digits (round-trip safe)."""
    return format(float(x), ".17g")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_matrix_csv(path, M, unit: str = "1") -> Path:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    header = [f"col{j} [{unit}]" for j in range(M.shape[1])]
    return write_csv(path, header, ([fmt(v) for v in row] for row in M))


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]])


def read_series_csv(path, column: int | str = -1) -> np.ndarray:
    """Read one numeric column from a CSV file with a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if isinstance(column, str):
        column = header.index(column)
    return np.array([float(r[column]) for r in body if r])


def write_jsonl(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isfinite(v):
            return v
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj
