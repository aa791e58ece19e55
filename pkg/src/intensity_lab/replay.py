"""Replay published per-level tables and export figure series.

A fixture holds raw counts only (``level,e1..ek,views,positives,negatives``).
Everything derived is recomputed and compared against a sidecar
``<stem>.expected.csv`` holding the printed values, cell by cell:

* factor cells (``rpf``, ``rnf``, ``rnr``) must match exactly after rounding
  half-up to two decimals of a percent;
* change-rate cells (``crp``, ``crn``) are computed from the rounded
  percentages and must match at four decimals for at least
  ``CR_PASS_FRACTION`` of the cells, plus every listed spot check.

``replay_reference.json`` lists the spot checks and the printed segment
statistics for each bundled fixture.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import FixtureParseError
from .metrics import (
    SD_CONVENTION,
    ExposureCounts,
    LevelStats,
    aggregate_group,
    build_level_table,
    level_segment_stats,
    percent2,
    read_counts_csv,
    read_group_csv,
    round_half_up,
)
from .sequence import DegenerateSeriesError, analysis_report, normalize, per_level_distance

CR_PASS_FRACTION = 0.9
MEAN_TOL = 0.0005
SD_TOL = 0.002
FACTOR_COLUMNS = ("rpf", "rnf", "rnr")
CR_COLUMNS = ("crp", "crn")


def data_path(name: str) -> Path:
    """Path of a bundled data file."""
    return Path(str(resources.files("intensity_lab").joinpath("data").joinpath(name)))


@dataclass(frozen=True)
class ReplayCell:
    cell_id: str
    computed: str
    expected: str
    delta: float | None
    passed: bool
    tolerance: str
    raw: float | None = None
    gated: bool = True


@dataclass
class ReplayReport:
    fixture: str
    cells: list[ReplayCell]
    spot_checks: list[str] = field(default_factory=list)
    segments: list[ReplayCell] = field(default_factory=list)
    sd_convention: str = SD_CONVENTION
    analysis: dict = field(default_factory=dict)

    def _cells(self, columns) -> list[ReplayCell]:
        return [c for c in self.cells if c.cell_id.split(".")[-1] in columns]

    @property
    def factor_cells(self) -> list[ReplayCell]:
        return self._cells(FACTOR_COLUMNS)

    @property
    def cr_cells(self) -> list[ReplayCell]:
        return self._cells(CR_COLUMNS)

    @property
    def cr_pass_fraction(self) -> float:
        cells = self.cr_cells
        return sum(c.passed for c in cells) / len(cells) if cells else 1.0

    @property
    def failures(self) -> list[ReplayCell]:
        return [c for c in self.cells + self.segments if not c.passed]

    @property
    def ok(self) -> bool:
        """True iff every acceptance-gated check passes."""
        by_id = {c.cell_id: c for c in self.cells}
        return (
            all(c.passed for c in self.factor_cells + [c for c in self.cells if c.cell_id.startswith("total")])
            and self.cr_pass_fraction >= CR_PASS_FRACTION
            and all(by_id[s].passed for s in self.spot_checks if s in by_id)
            and all(c.passed for c in self.segments if c.gated)
        )

    def summary(self) -> dict:
        return {
            "fixture": self.fixture,
            "cells": len(self.cells),
            "passed": sum(c.passed for c in self.cells),
            "factor_cells_passed": f"{sum(c.passed for c in self.factor_cells)}/{len(self.factor_cells)}",
            "cr_pass_fraction": self.cr_pass_fraction,
            "spot_checks": self.spot_checks,
            "segments_passed": f"{sum(c.passed for c in self.segments)}/{len(self.segments)}",
            "sd_convention": self.sd_convention,
            "ok": self.ok,
        }

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "cells": [asdict(c) for c in self.cells],
            "segments": [asdict(c) for c in self.segments],
            "failures": [c.cell_id for c in self.failures],
            "analysis": self.analysis,
        }


def read_expected_csv(path: str | Path) -> dict[int | str, dict[str, str]]:
    """Printed values keyed by the first column (level or group); empty cells dropped."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        key = reader.fieldnames[0] if reader.fieldnames else None
        if key is None:
            raise FixtureParseError("empty expected-value file", 1)
        out = {}
        for lineno, row in enumerate(reader, start=2):
            ident = row.pop(key)
            try:
                ident = int(ident) if key == "level" else ident
            except ValueError as exc:
                raise FixtureParseError(f"bad {key} {ident!r}", lineno) from exc
            out[ident] = {k: v.strip() for k, v in row.items() if v is not None and v.strip()}
        return out


def _percent_cell(cell_id: str, value: Fraction | None, expected: str) -> ReplayCell:
    if value is None:
        return ReplayCell(cell_id, "", expected, None, False, "2dp percent")
    computed = f"{percent2(value)}%"
    delta = abs(float(percent2(value) - Decimal(expected.rstrip("%"))))
    return ReplayCell(cell_id, computed, expected, delta, computed == expected, "2dp percent", float(value) * 100)


def _cr_cell(cell_id: str, value: float | None, raw: float | None, expected: str) -> ReplayCell:
    if value is None:
        return ReplayCell(cell_id, "", expected, None, False, "4dp", raw)
    computed = str(round_half_up(value, 4))
    delta = abs(float(Decimal(computed) - Decimal(expected)))
    return ReplayCell(cell_id, computed, expected, delta, computed == expected, "4dp", raw)


def _reference(stem: str) -> dict:
    refs = json.loads(data_path("replay_reference.json").read_text())
    return refs.get(stem, {})


def _segment_cells(table: Sequence[LevelStats], reference: dict) -> list[ReplayCell]:
    cells = []
    gated = bool(reference.get("segments_gated", False))
    for column, spans in reference.get("segments", {}).items():
        for span, (mean, sd) in spans.items():
            first, last = (int(x) for x in span.split("-"))
            stats = level_segment_stats(table, column, first, last)
            cid = f"{column}[{span}]"
            cells.append(ReplayCell(f"{cid}.mean", f"{stats.mean:.4f}", f"{mean:.4f}",
                                    abs(stats.mean - mean), abs(stats.mean - mean) <= MEAN_TOL,
                                    f"+-{MEAN_TOL}", stats.mean, gated))
            best = min(abs(stats.sd_sample - sd), abs(stats.sd_population - sd))
            cells.append(ReplayCell(f"{cid}.sd", f"{stats.sd:.4f} (population {stats.sd_population:.4f})",
                                    f"{sd:.4f}", best, best <= SD_TOL, f"+-{SD_TOL}", stats.sd, gated))
    return cells


def replay_table(fixture: str | Path, expected: str | Path | None = None) -> ReplayReport:
    """Recompute a per-level table from raw counts and compare with its printed values."""
    fixture = Path(fixture)
    counts = read_counts_csv(fixture)
    stem = fixture.name.split(".")[0]
    expected = Path(expected) if expected is not None else fixture.with_name(stem + ".expected.csv")
    printed = read_expected_csv(expected)
    table = build_level_table(counts)
    by_level = {c.level_index: c for c in counts}
    rows = {r.level_index: r for r in table}

    cells = []
    for level, values in sorted(printed.items()):
        c, row = by_level.get(level), rows.get(level)
        for col, text in values.items():
            cid = f"L{level}.{col}"
            if c is None:
                cells.append(ReplayCell(cid, "", text, None, False, "missing level"))
            elif col in FACTOR_COLUMNS:
                num, den = {"rpf": (c.positives, c.views), "rnf": (c.negatives, c.views),
                            "rnr": (c.negatives, c.positives)}[col]
                cells.append(_percent_cell(cid, Fraction(num, den) if den else None, text))
            elif col in CR_COLUMNS:
                cells.append(_cr_cell(cid, getattr(row, col), getattr(row, col + "_raw"), text))
            else:
                raise FixtureParseError(f"unknown expected column {col!r}", 1)

    reference = _reference(stem)
    report = ReplayReport(
        fixture=fixture.name,
        cells=cells,
        spot_checks=list(reference.get("spot_checks", [])),
        segments=_segment_cells(table, reference),
    )
    if all(r.rpf is not None for r in table) and len(table) > 1:
        report.analysis = analysis_report([r.rpf for r in table], [r.rnf for r in table],
                                          views=[r.views for r in table])
    return report


def replay_groups(
    groups_csv: str | Path | None = None,
    expected: str | Path | None = None,
    level_fixtures: dict[str, str | Path] | None = None,
) -> ReplayReport:
    """Compare group totals and their factors with the printed group table.

    ``level_fixtures`` maps groups to per-level fixtures whose summed counts
    must equal the group row exactly.
    """
    groups_csv = Path(groups_csv) if groups_csv is not None else data_path("table3_groups.csv")
    expected = Path(expected) if expected is not None else groups_csv.with_name(
        groups_csv.name.split(".")[0] + ".expected.csv")
    if level_fixtures is None:
        level_fixtures = {"G4": data_path("table1_g4.csv"), "G5": data_path("table2_g5.csv")}
    totals = read_group_csv(groups_csv)
    printed = read_expected_csv(expected)
    cells = []
    for group, values in sorted(printed.items()):
        c = totals.get(group)
        for col, text in values.items():
            num = None if c is None else {"rpf": c.positives, "rnf": c.negatives}[col]
            value = Fraction(num, c.views) if c is not None and c.views else None
            cells.append(_percent_cell(f"{group}.{col}", value, text))
    for group, path in sorted(level_fixtures.items()):
        summed = aggregate_group(read_counts_csv(path))
        target = totals.get(group, ExposureCounts(1))
        for col in ("views", "positives", "negatives"):
            got, want = getattr(summed, col), getattr(target, col)
            cells.append(ReplayCell(f"total.{group}.{col}", str(got), str(want), abs(got - want),
                                    got == want, "exact"))
        for col, num in (("rpf", summed.positives), ("rnf", summed.negatives)):
            text = printed.get(group, {}).get(col)
            if text is not None:
                cells.append(_percent_cell(f"total.{group}.{col}", Fraction(num, summed.views), text))
    return ReplayReport(fixture=groups_csv.name, cells=cells)


# --------------------------------------------------------------------------- figures

INCREASING_FIGURES = {"rpf": "fig4", "rnf": "fig5", "normalized": "fig6", "gap": "fig7", "rps": "fig8", "rns": "fig9"}
DECREASING_FIGURES = {"rpf": "fig10", "rnf": "fig11", "rps": "fig12", "rns": "fig13", "normalized": "fig14", "gap": "fig15"}


@dataclass
class FigureData:
    direction: str
    series: dict[str, dict[str, list[float | None]]]
    skipped: dict[str, str] = field(default_factory=dict)


def schedule_direction(table: Sequence[LevelStats | ExposureCounts]) -> str:
    """``"increasing"`` or ``"decreasing"`` from the first and last level vectors."""
    first, last = table[0].levels, table[-1].levels
    if not first or not last or sum(first) == sum(last):
        raise ValueError("cannot infer schedule direction from level vectors; pass direction=")
    return "increasing" if sum(last) > sum(first) else "decreasing"


def figure_data(table: Sequence[LevelStats], direction: str | None = None) -> FigureData:
    """Series behind each per-level figure, at full precision.

    Normalized figures are skipped (with a reason) when a series is constant.
    """
    direction = direction or schedule_direction(table)
    names = {"increasing": INCREASING_FIGURES, "decreasing": DECREASING_FIGURES}.get(direction)
    if names is None:
        raise ValueError("direction must be 'increasing' or 'decreasing'")
    levels = [r.level_index for r in table]
    series: dict[str, dict[str, list]] = {}
    for col in ("rpf", "rnf", "rps", "rns"):
        series[names[col]] = {"level": levels, "value": [getattr(r, col) for r in table]}
    skipped = {}
    try:
        pos = normalize([r.rpf for r in table])
        neg = normalize([r.rnf for r in table])
        series[names["normalized"]] = {"level": levels, "positive": list(pos.values), "negative": list(neg.values)}
        series[names["gap"]] = {"level": levels, "value": list(per_level_distance(pos, neg).values)}
    except (DegenerateSeriesError, TypeError, ValueError) as exc:
        if any(r.rpf is None for r in table):
            reason = "levels without views"
        else:
            reason = str(exc)
        if [r.rpf for r in table] == [r.rnf for r in table]:
            # identical inputs: the per-level gap is zero by definition
            series[names["gap"]] = {"level": levels, "value": [0.0] * len(levels)}
            skipped[names["normalized"]] = reason
        else:
            skipped[names["normalized"]] = skipped[names["gap"]] = reason
    order = sorted(series, key=lambda n: int(n[3:]))
    return FigureData(direction, {n: series[n] for n in order}, skipped)


def write_figures(data: FigureData, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, columns in data.series.items():
        path = out_dir / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(columns))
            for row in zip(*columns.values()):
                writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
        written.append(path)
    return written

