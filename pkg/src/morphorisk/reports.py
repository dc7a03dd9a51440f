"""Diff-stable report tables: fixed column order, %.6g floats, LF."""
from __future__ import annotations

import csv
import math
from pathlib import Path


def fmt(value) -> str:
    """Cell formatting: empty for missing, %.6g for reals."""
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return "%.6g" % value
    return str(value)


def write_table(path, columns, rows):
    """Write dict rows as CSV in the given column order.

    Missing keys render empty; extra keys are an error so silent column
    drift cannot happen.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    colset = set(columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            extra = set(row) - colset
            if extra:
                raise ValueError(f"unexpected columns {sorted(extra)}")
            writer.writerow([fmt(row.get(c)) for c in columns])


def write_kv(path, mapping):
    """key=value text file, keys in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in mapping.items():
            fh.write(f"{k}={fmt(v)}\n")


def write_lines(path, lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
