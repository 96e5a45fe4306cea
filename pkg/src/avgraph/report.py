"""Tabular reports with a provenance header (CSV or JSON)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from . import __version__

FORMATS = ("csv", "json")


def _cell(x):
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, (int, str)):
        return x
    return float(x)


def _text(x) -> str:
    x = _cell(x)
    return "%.17g" % x if isinstance(x, float) else str(x)


@dataclass
class ReportTable:
    """Rectangular table; ``provenance`` is written as ``#`` rows before the body."""

    columns: list[str]
    rows: list[list] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} cells, table has {len(self.columns)} columns")
        self.rows.append([_cell(x) for x in row])

    def header(self) -> dict:
        return {"version": f"avgraph-{__version__}", **self.provenance}

    def body_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_text(x) for x in r])
        return buf.getvalue()

    def to_csv(self) -> str:
        head = "".join(f"# {k}: {v}\n" for k, v in self.header().items())
        return head + self.body_csv()

    def to_json(self) -> str:
        return json.dumps({"provenance": self.header(), "columns": self.columns,
                           "rows": self.rows}, indent=2) + "\n"

    def render(self, fmt: str) -> str:
        if fmt not in FORMATS:
            raise ValueError(f"unknown format {fmt!r}")
        return self.to_csv() if fmt == "csv" else self.to_json()


def csv_body(text: str) -> str:
    """Strip ``#`` comment rows (the provenance header) from a CSV document."""
    return "".join(ln for ln in text.splitlines(keepends=True) if not ln.startswith("#"))
