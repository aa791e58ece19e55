import csv

import pytest

from intensity_lab.errors import FixtureParseError
from intensity_lab.metrics import ExposureCounts, build_level_table
from intensity_lab.replay import (
    data_path,
    figure_data,
    read_expected_csv,
    replay_groups,
    replay_table,
    schedule_direction,
    write_figures,
)


@pytest.mark.parametrize("name", ["table1_g4.csv", "table2_g5.csv"])
def test_every_expected_cell_appears_once(name):
    report = replay_table(data_path(name))
    expected = read_expected_csv(data_path(name.replace(".csv", ".expected.csv")))
    n_cells = sum(len(v) for v in expected.values())
    ids = [c.cell_id for c in report.cells]
    assert len(ids) == len(set(ids)) == n_cells
    assert report.ok


def test_table2_spot_check_and_segment_reporting():
    report = replay_table(data_path("table2_g5.csv"))
    cell = {c.cell_id: c for c in report.cells}["L15.crn"]
    assert cell.computed == "8.5000" and cell.passed
    # segment figures are reported but not gated for this table
    assert report.segments and not any(c.gated for c in report.segments)


def test_table1_segments_gated_and_sd_convention():
    report = replay_table(data_path("table1_g4.csv"))
    assert report.segments and all(c.gated and c.passed for c in report.segments)
    assert report.sd_convention == "sample"
    assert report.analysis["saturation"]["detected_level"] == 10


def test_tampered_fixture_fails_with_itemized_cells(tmp_path):
    src = data_path("table1_g4.csv").read_text().splitlines()
    fields = src[3].split(",")
    fields[-2] = str(int(fields[-2]) + 400)
    src[3] = ",".join(fields)
    fixture = tmp_path / "table1_g4.csv"
    fixture.write_text("\n".join(src) + "\n")
    report = replay_table(fixture, data_path("table1_g4.expected.csv"))
    assert not report.ok
    assert "L3.rpf" in {c.cell_id for c in report.failures}
    assert all(c.raw is not None for c in report.failures if c.cell_id.endswith(("crp", "crn")))


def test_group_replay():
    report = replay_groups()
    assert report.ok and len(report.cells) == 20
    by_id = {c.cell_id: c for c in report.cells}
    assert by_id["G3.rpf"].computed == "4.10%"
    assert by_id["total.G4.views"].computed == "399146"


def test_expected_csv_bad_level(tmp_path):
    path = tmp_path / "x.expected.csv"
    path.write_text("level,rpf\none,1%\n")
    with pytest.raises(FixtureParseError, match="line 2"):
        read_expected_csv(path)


def test_figure_names_by_direction(inc_table, dec_table):
    assert list(figure_data(inc_table).series) == ["fig4", "fig5", "fig6", "fig7", "fig8", "fig9"]
    assert list(figure_data(dec_table).series) == ["fig10", "fig11", "fig12", "fig13", "fig14", "fig15"]
    assert all(len(col) == 25 for s in figure_data(inc_table).series.values() for col in s.values())


def test_fig4_peak_and_plateau(inc_table, tmp_path):
    paths = write_figures(figure_data(inc_table), tmp_path)
    assert [p.name for p in paths][0] == "fig4.csv"
    with open(tmp_path / "fig4.csv") as fh:
        rows = list(csv.DictReader(fh))
    values = [float(r["value"]) for r in rows]
    peak = max(range(25), key=values.__getitem__)
    assert peak + 1 == 8 and round(values[peak] * 100, 2) == 5.03
    expected = read_expected_csv(data_path("table1_g4.expected.csv"))
    assert all(f"{v * 100:.2f}%" == expected[i + 1]["rpf"] for i, v in enumerate(values))
    assert float(rows[0]["value"]) == 2452 / 106329


def test_fig11_decline(dec_table, tmp_path):
    write_figures(figure_data(dec_table), tmp_path)
    with open(tmp_path / "fig11.csv") as fh:
        values = [float(r["value"]) for r in csv.DictReader(fh)]
    assert round(values[0] * 100, 2) == 0.99
    assert round(min(values[:10]) * 100, 2) <= 0.11


def test_identical_series_gap_is_zero():
    table = build_level_table(
        [ExposureCounts(i, (i,), 100, i, i) for i in range(1, 6)]
    )
    data = figure_data(table, "increasing")
    assert data.series["fig7"]["value"] == [0.0] * 5


def test_direction_needs_level_vectors():
    with pytest.raises(ValueError):
        schedule_direction(build_level_table([ExposureCounts(1, (), 1, 0, 0), ExposureCounts(2, (), 1, 0, 0)]))
