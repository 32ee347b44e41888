"""Flat CSV report rows shared by all experiments.

Column order is fixed; every row carries the run id so no orphan rows can
appear when files are concatenated.  Floats are serialized with repr (exact
round-trip), which also makes byte-identical reruns checkable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

CSV_COLUMNS = ("run_id", "experiment", "quantity", "k", "q", "r", "alpha", "epsilon", "dt", "seed", "value")


@dataclass
class ReportRow:
    run_id: str
    experiment: str
    quantity: str
    value: float
    k: int | None = None
    q: float | None = None
    r: float | None = None
    alpha: int | None = None
    epsilon: float | None = None
    dt: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        self.value = float(self.value)
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite value for quantity {self.quantity!r}")

    def as_record(self) -> list[str]:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return repr(x)
            return str(x)

        return [fmt(getattr(self, name)) for name in CSV_COLUMNS]


def rows_to_csv_bytes(rows: list[ReportRow]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_record())
    return buf.getvalue().encode("utf-8")


def write_csv(path, rows: list[ReportRow]) -> None:
    with open(path, "wb") as fh:
        fh.write(rows_to_csv_bytes(rows))


def read_csv_rows(path) -> list[dict]:
    """Parse a results file back into typed dicts (empty cells become None)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"results file missing columns: {missing}")
        for rec in reader:
            row = dict(rec)
            for key in ("k", "alpha", "seed"):
                row[key] = int(row[key]) if row[key] else None
            for key in ("q", "r", "epsilon", "dt", "value"):
                row[key] = float(row[key]) if row[key] else None
            out.append(row)
    return out
