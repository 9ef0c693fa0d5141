"""CSV reading with schema diagnostics for the metamoran output contracts."""

from __future__ import annotations

import csv
from pathlib import Path


class SchemaError(ValueError):
    """Input CSV does not match the documented schema."""


def read_table(path) -> tuple[list[str], list[list[float]]]:
    """Read a metamoran CSV: header row plus float columns.

    Returns (header, columns).  Raises :class:`SchemaError` on a missing
    header, an empty body, or non-numeric cells.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        columns: list[list[float]] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            for k, cell in enumerate(row):
                try:
                    columns[k].append(float(cell))
                except ValueError:
                    raise SchemaError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
    if not columns[0]:
        raise SchemaError(f"{path}: no data rows")
    return header, columns


def require_columns(path, header: list[str], required: list[str]) -> None:
    missing = [name for name in required if name not in header]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}; header is {header}")
