"""Curve tables and human-readable summaries."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

CURVE_COLUMNS = ("experiment", "model", "n_neurons", "n_types", "n_samples", "seed",
                 "fev_mean", "corr_mean", "wall_seconds")
KEY_COLUMNS = ("experiment", "model", "n_neurons", "n_types", "n_samples", "seed")

# Published reference FEVs for a few anchor cells, keyed by
# (experiment, model, n_neurons or None for any, n_samples).
REFERENCE_FEV = {
    ("linear-homog", "factorized", 1000, 256): 0.55,
    ("linear-homog", "ridge", None, 4096): 0.65,
    ("nonlinear-samples", "glm", None, 4096): 0.20,
}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _parse(column: str, text: str):
    if text == "":
        return math.nan if column in ("fev_mean", "corr_mean", "wall_seconds") else None
    if column in ("n_neurons", "n_types", "n_samples", "seed"):
        return int(text)
    if column in ("fev_mean", "corr_mean", "wall_seconds"):
        return float(text)
    return text


@dataclass
class CurveTable:
    """One row per (experiment, model, axes, seed) cell."""

    rows: list[dict] = field(default_factory=list)

    def add(self, row: dict) -> None:
        missing = [c for c in CURVE_COLUMNS if c not in row]
        if missing:
            raise ValueError(f"row is missing columns {missing}")
        key = tuple(row[c] for c in KEY_COLUMNS)
        if any(tuple(r[c] for c in KEY_COLUMNS) == key for r in self.rows):
            raise ValueError(f"duplicate curve-table key {key}")
        self.rows.append({c: row[c] for c in CURVE_COLUMNS})

    def sorted(self) -> "CurveTable":
        def key(r):
            return tuple("" if r[c] is None else r[c] for c in KEY_COLUMNS)
        return CurveTable(sorted(self.rows, key=key))

    def to_csv(self, include_wall: bool = True) -> str:
        cols = CURVE_COLUMNS if include_wall else CURVE_COLUMNS[:-1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in self.rows:
            writer.writerow([_fmt(r[c]) for c in cols])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CurveTable":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != CURVE_COLUMNS:
            raise ValueError(f"unexpected curve-table columns {reader.fieldnames}")
        table = cls()
        for rec in reader:
            table.add({c: _parse(c, rec[c]) for c in CURVE_COLUMNS})
        return table

    def merge(self, other: "CurveTable") -> "CurveTable":
        out = CurveTable(list(self.rows))
        for r in other.rows:
            out.add(r)
        return out

    def mean_fev(self, **where) -> float:
        """Mean ``fev_mean`` over seeds of the rows matching ``where``."""
        vals = [r["fev_mean"] for r in self.rows
                if all(r[k] == v for k, v in where.items()) and not math.isnan(r["fev_mean"])]
        return float(sum(vals) / len(vals)) if vals else math.nan


def summarize(table: CurveTable) -> str:
    """Best model per cell (seed-averaged) and deltas to the reference values."""
    groups: dict[tuple, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in table.rows:
        cell = (r["experiment"], r["n_neurons"], r["n_types"], r["n_samples"])
        if not math.isnan(r["fev_mean"]):
            groups[cell][r["model"]].append(r["fev_mean"])
    lines = ["best model per cell (mean FEV over seeds)"]
    for cell in sorted(groups, key=lambda c: tuple(-1 if v is None else v for v in c[1:]) + (c[0],)):
        means = {m: sum(v) / len(v) for m, v in groups[cell].items()}
        best = max(sorted(means), key=lambda m: means[m])
        exp, n, t, s = cell
        lines.append(f"  {exp} n_neurons={n} n_types={t} n_samples={s}: {best} ({means[best]:.3f})")
    deltas = []
    for (exp, model, n, s), ref in sorted(REFERENCE_FEV.items(), key=str):
        value = table.mean_fev(experiment=exp, model=model, n_samples=s,
                               **({} if n is None else {"n_neurons": n}))
        if not math.isnan(value):
            deltas.append(f"  {exp} {model} n_samples={s}: {value:.3f} vs reference {ref:.2f} "
                          f"(delta {value - ref:+.3f})")
    if deltas:
        lines.append("comparison with reference values")
        lines.extend(deltas)
    return "\n".join(lines) + "\n"


def emit_report(table: CurveTable, out: str | Path) -> list[Path]:
    """Write one CSV per experiment plus ``summary.txt``; returns the written paths."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    table = table.sorted()
    written = []
    experiments = sorted({r["experiment"] for r in table.rows})
    for exp in experiments:
        sub = CurveTable([r for r in table.rows if r["experiment"] == exp])
        path = out / f"{exp}.csv"
        path.write_text(sub.to_csv())
        written.append(path)
    if not experiments:
        path = out / "curves.csv"
        path.write_text(table.to_csv())
        written.append(path)
    summary = out / "summary.txt"
    summary.write_text(summarize(table))
    written.append(summary)
    return written
