"""Delimited-text ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True, eq=False)
class Dataset:
    rows: np.ndarray
    column_names: tuple[str, ...] | None = None
    centering_offset: np.ndarray | None = None
    rejected: int = 0

    @property
    def N(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def offset(self) -> np.ndarray:
        if self.centering_offset is None:
            return np.zeros(self.d)
        return self.centering_offset


def _parse(cell: str) -> float:
    return float(cell.strip())


def ingest(path, delimiter: str = ",", header: bool | None = None, center: bool = False,
           max_rows: int | None = None, offset=None) -> Dataset:
    """Read a numeric delimited file.

    ``header=None`` treats the first line as column names when any of
    its cells is not a number. Rows with the wrong number of fields,
    empty cells or non-finite values are dropped and counted in
    ``rejected``; any other non-numeric cell is an error. ``center``
    subtracts the column means (or the given ``offset``) and records it.
    """
    names = None
    values: list[list[float]] = []
    rejected = 0
    width = None
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if lineno == 1 and names is None and header is not False:
                try:
                    [_parse(c) for c in cells if c.strip()]
                    numeric = True
                except ValueError:
                    numeric = False
                if header or not numeric:
                    names = tuple(c.strip() for c in cells)
                    width = len(names)
                    continue
            if width is None:
                width = len(cells)
            if len(cells) != width or any(not c.strip() for c in cells):
                rejected += 1
                continue
            try:
                row = [_parse(c) for c in cells]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell") from exc
            if not all(math.isfinite(v) for v in row):
                rejected += 1
                continue
            values.append(row)
            if max_rows is not None and len(values) >= max_rows:
                break
    if not values:
        raise DataError(f"{path}: no usable rows")
    X = np.array(values, dtype=float)
    off = None
    if offset is not None:
        off = np.asarray(offset, dtype=float).reshape(-1)
        if off.shape[0] != X.shape[1]:
            raise DataError("centering offset does not match the number of columns")
        X = X - off
    elif center:
        off = X.mean(axis=0)
        X = X - off
    return Dataset(X, names, off, rejected)
