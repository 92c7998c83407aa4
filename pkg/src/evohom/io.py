"""CSV and JSON writers; every file is written to a temporary name and renamed into place."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """RFC 4180 CSV (CRLF line ends, UTF-8, '.' decimal) with a header row."""
    path = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    os.replace(tmp, path)
    return path


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(_plain(obj), fh, indent=2, allow_nan=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def flatten_radii(rows: list[dict], R: np.ndarray, prefix: str = "R") -> None:
    """Append per-cell radius columns ``R_k1_k2`` to the last row."""
    R = np.asarray(R)
    for (k1, k2), v in np.ndenumerate(R):
        rows[-1][f"{prefix}_{k1}_{k2}"] = float(v)
