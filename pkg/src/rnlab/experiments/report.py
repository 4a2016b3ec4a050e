"""Experiment reports and their on-disk form.

Every table is written as ``<scenario>.<table>.csv``; the run summary goes to
``<scenario>.report.txt`` and the canonical config to
``<scenario>.config.ini``. File contents depend only on the report's data,
never on timing or thread count, so a replay with the same config and seed
reproduces them byte for byte. Wall-clock timings stay on the report object.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

from rnlab.brownian import fmt
from rnlab.experiments.config import ExperimentConfig

FORMATS = ("csv", "structured-text")


@dataclass
class Table:
    name: str
    columns: tuple
    rows: list = field(default_factory=list)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row of length {len(row)} for {len(self.columns)} columns in {self.name}")
        self.rows.append(tuple(row))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentReport:
    scenario: str
    config: ExperimentConfig
    tables: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    # name -> DensityField, written as CSV and RNL1 binary
    fields: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def new_table(self, name: str, *columns: str) -> Table:
        t = Table(name, tuple(columns))
        self.tables.append(t)
        return t

    def add_check(self, name: str, passed, detail: str = "") -> Check:
        c = Check(name, bool(passed), detail)
        self.checks.append(c)
        return c


def cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return fmt(v)
    if hasattr(v, "dtype"):
        return cell(v.item())
    return str(v)


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([cell(v) for v in row])
    return buf.getvalue()


def read_table_csv(path: str | Path, name: str | None = None) -> Table:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file, expected a header")
    t = Table(name or Path(path).stem.split(".")[-1], tuple(rows[0]))
    for r in rows[1:]:
        t.add(*(_parse_cell(c) for c in r))
    return t


def structured_text(report: ExperimentReport) -> str:
    out = io.StringIO()
    out.write(f"scenario: {report.scenario}\n")
    out.write(f"seed: {report.config.seed}\n")
    out.write(f"status: {'pass' if report.passed else 'fail'}\n\n")
    out.write("# config\n")
    out.write(report.config.to_ini())
    out.write("# checks\n")
    for c in report.checks:
        out.write(f"{c.name}: {'pass' if c.passed else 'fail'}")
        out.write(f"  ({c.detail})\n" if c.detail else "\n")
    for t in report.tables:
        out.write(f"\n# table {t.name} ({len(t.rows)} rows)\n")
        out.write(table_csv(t))
    return out.getvalue()


def emit_report(report: ExperimentReport, out_dir: str | Path, formats=FORMATS) -> list[Path]:
    """Write the report; returns the paths written, in a fixed order."""
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown format(s) {sorted(bad)}; expected {FORMATS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.scenario
    written = []

    def put(name: str, text: str) -> None:
        p = out / name
        p.write_text(text)
        written.append(p)

    put(f"{stem}.config.ini", report.config.to_ini())
    if "csv" in formats:
        for t in report.tables:
            put(f"{stem}.{t.name}.csv", table_csv(t))
        for name, u in report.fields.items():
            p = out / f"{stem}.{name}.csv"
            u.to_csv(p)
            written.append(p)
            p = out / f"{stem}.{name}.rnl"
            u.to_binary(p)
            written.append(p)
    if "structured-text" in formats:
        put(f"{stem}.report.txt", structured_text(report))
    return written


def format_timings(report: ExperimentReport) -> str:
    total = sum(report.timings.values())
    parts = [f"{k}={v:.2f}s" for k, v in report.timings.items()]
    return f"{report.scenario}: " + ", ".join(parts + [f"total={total:.2f}s"]) if parts else report.scenario


def finite(x) -> bool:
    return x is not None and math.isfinite(float(x))
