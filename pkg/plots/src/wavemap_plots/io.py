"""Reader for the wavemap-lab results schema.

The contract with the producer is the file format alone: a CSV with the
fixed column set below, floats in repr form, empty cells for unset tags.
"""

from __future__ import annotations

import csv
from pathlib import Path

CSV_COLUMNS = ("run_id", "experiment", "quantity", "k", "q", "r", "alpha", "epsilon", "dt", "seed", "value")

_INT_COLS = ("k", "alpha", "seed")
_FLOAT_COLS = ("q", "r", "epsilon", "dt", "value")


class SchemaError(ValueError):
    pass


def read_rows(paths) -> list[dict]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    rows: list[dict] = []
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise SchemaError(f"input file not found: {path}")
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise SchemaError(f"{path} is missing required columns: {missing}")
            for rec in reader:
                row = dict(rec)
                for col in _INT_COLS:
                    row[col] = int(row[col]) if row[col] else None
                for col in _FLOAT_COLS:
                    row[col] = float(row[col]) if row[col] else None
                rows.append(row)
    return rows


def select(rows: list[dict], quantity: str | None = None, prefix: str | None = None) -> list[dict]:
    out = rows
    if quantity is not None:
        out = [r for r in out if r["quantity"] == quantity]
    if prefix is not None:
        out = [r for r in out if r["quantity"].startswith(prefix)]
    return out
