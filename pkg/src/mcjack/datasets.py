"""Bundled datasets.

The hospital data: graft failure rates for 23 hospitals with at least 50
kidney transplants over a 27-month window, a severity index ``s`` per
hospital, and known sampling standard deviations.  Shipped verbatim as
``data/hospital.csv``.
"""

from __future__ import annotations

from importlib import resources

from .ingest import AreaTable, parse_area_table, build_dataset
from .model import AreaDataset

BUILTIN_NAMES = ("hospital",)


def builtin_csv_text(name: str) -> str:
    """Raw CSV text of a bundled dataset, byte-identical to the shipped file."""
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown builtin dataset {name!r}; known: {BUILTIN_NAMES}")
    return (resources.files("mcjack") / "data" / f"{name}.csv").read_text(encoding="utf-8")


def builtin_table(name: str) -> AreaTable:
    import csv
    import io

    text = builtin_csv_text(name)
    return parse_area_table(csv.reader(io.StringIO(text)), source=f"builtin:{name}")


def hospital_dataset(mean: str = "poly:s:3") -> AreaDataset:
    """The hospital data under a polynomial severity mean (cubic by default)."""
    return build_dataset(builtin_table("hospital"), mean=mean)
