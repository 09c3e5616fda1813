"""CSV ingestion and mean-model construction for the command line.

Input format: a UTF-8 CSV whose header names an ``area`` column, a ``y``
column, and exactly one of ``D`` (sampling variance) or ``sqrtD`` (its
square root); every remaining column is a covariate.  Errors carry
row/column coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CsvFormatError
from .model import AreaDataset


@dataclass(frozen=True)
class AreaTable:
    """Raw parsed CSV: ids, observations, variances, named covariates."""

    area_ids: tuple
    y: np.ndarray
    D: np.ndarray
    covariate_names: tuple
    covariates: np.ndarray  # (m, n_cov), column order as in the file


def parse_area_table(rows, source: str = "<csv>") -> AreaTable:
    """Parse a sequence of CSV rows (header first) into an :class:`AreaTable`."""
    rows = list(rows)
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise CsvFormatError(f"{source}: empty input, expected a header row with area,y,D")
    header = [h.strip() for h in rows[0]]
    required = {"area", "y"}
    missing = required - set(header)
    if missing:
        raise CsvFormatError(f"{source}: header is missing column(s) {sorted(missing)}")
    has_d = "D" in header
    has_sqrt = "sqrtD" in header
    if has_d == has_sqrt:
        raise CsvFormatError(
            f"{source}: header must contain exactly one of 'D' or 'sqrtD'"
        )
    var_col = "D" if has_d else "sqrtD"
    seen = set()
    for h in header:
        if h in seen:
            raise CsvFormatError(f"{source}: duplicate header column {h!r}")
        seen.add(h)
    idx = {h: i for i, h in enumerate(header)}
    cov_names = [h for h in header if h not in ("area", "y", var_col)]

    ids, ys, ds, covs = [], [], [], []
    for r, row in enumerate(rows[1:], start=2):  # 1-based with header as row 1
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise CsvFormatError(
                f"{source}: row {r} has {len(row)} cells, header has {len(header)}"
            )

        def cell(col: str) -> str:
            return row[idx[col]].strip()

        def num(col: str) -> float:
            text = cell(col)
            try:
                return float(text)
            except ValueError:
                raise CsvFormatError(
                    f"{source}: row {r}, column {col!r}: not a number: {text!r}"
                ) from None

        aid = cell("area")
        if aid in ids:
            raise CsvFormatError(f"{source}: row {r}: duplicate area id {aid!r}")
        ids.append(aid)
        ys.append(num("y"))
        v = num(var_col)
        d = v * v if var_col == "sqrtD" else v
        if not d > 0.0:
            raise CsvFormatError(
                f"{source}: row {r}, column {var_col!r}: variance must be positive, got {v}"
            )
        ds.append(d)
        covs.append([num(c) for c in cov_names])

    if not ids:
        raise CsvFormatError(f"{source}: no data rows")
    return AreaTable(
        area_ids=tuple(ids),
        y=np.asarray(ys, dtype=float),
        D=np.asarray(ds, dtype=float),
        covariate_names=tuple(cov_names),
        covariates=np.asarray(covs, dtype=float).reshape(len(ids), len(cov_names)),
    )


def read_area_table(path) -> AreaTable:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_area_table(csv.reader(fh), source=str(path))


def build_design(table: AreaTable, mean: str = "all", intercept: bool = True):
    """Design matrix and column names from a mean-model spec.

    ``all``             every covariate column as given
    ``cols:a,b``        the named columns
    ``poly:s:3``        s, s^2, s^3 built from the named column
    An intercept column is prepended unless ``intercept`` is false.
    """
    names = []
    cols = []
    if intercept:
        names.append("intercept")
        cols.append(np.ones(len(table.area_ids)))
    spec = mean.strip()
    if spec == "all":
        wanted = list(table.covariate_names)
        for c in wanted:
            names.append(c)
            cols.append(table.covariates[:, table.covariate_names.index(c)])
    elif spec.startswith("poly:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad mean spec {mean!r}; expected poly:<column>:<degree>")
        col, deg = parts[1], parts[2]
        if col not in table.covariate_names:
            raise ConfigError(
                f"mean spec names unknown column {col!r}; file has {list(table.covariate_names)}"
            )
        try:
            degree = int(deg)
        except ValueError:
            raise ConfigError(f"bad polynomial degree {deg!r} in {mean!r}") from None
        if degree < 1:
            raise ConfigError("polynomial degree must be >= 1")
        base = table.covariates[:, table.covariate_names.index(col)]
        for k in range(1, degree + 1):
            names.append(col if k == 1 else f"{col}^{k}")
            cols.append(base**k)
    elif spec.startswith("cols:"):
        for c in spec[len("cols:"):].split(","):
            c = c.strip()
            if c not in table.covariate_names:
                raise ConfigError(
                    f"mean spec names unknown column {c!r}; file has {list(table.covariate_names)}"
                )
            names.append(c)
            cols.append(table.covariates[:, table.covariate_names.index(c)])
    else:
        raise ConfigError(f"bad mean spec {mean!r}; use all, cols:..., or poly:<col>:<deg>")
    if not cols:
        raise ConfigError("the mean model has no columns")
    return np.column_stack(cols), tuple(names)


def build_dataset(table: AreaTable, mean: str = "all", intercept: bool = True) -> AreaDataset:
    X, _ = build_design(table, mean=mean, intercept=intercept)
    return AreaDataset(area_ids=table.area_ids, y=table.y, X_full=X, D=table.D)


def ingest_csv(path, mean: str = "all", intercept: bool = True) -> AreaDataset:
    """Read a CSV file into a validated dataset."""
    return build_dataset(read_area_table(path), mean=mean, intercept=intercept)
