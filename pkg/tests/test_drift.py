"""
tests/test_drift.py
Tests for the drift diagnostics: specimen change rows, clock-hour and stay-relative
histograms, onset distributions, input loading and byte-stable report emission.
"""

from datetime import datetime

import numpy as np
import pandas as pd
import pytest

from services.drift import charts
from services.drift.diagnostics import (
    STAY_HOURS,
    antibiotics_trend,
    daytime_share,
    hour_of_day_histogram,
    onset_distribution,
    specimen_change_rows,
    specimen_change_table,
    specimen_counts,
)
from services.drift.inputs import DriftInputs, load_drift_inputs
from services.drift.report import build_drift_report, emit_report, summary_markdown
from shared.schemas.schemas import YEAR_BUCKETS, SpecimenChangeRow

FIRST, LAST = YEAR_BUCKETS[0], YEAR_BUCKETS[3]


def _empty_inputs() -> DriftInputs:
    return DriftInputs(
        labels=pd.DataFrame(columns=["stay_id", "year_bucket", "label", "onset_time"]),
        microbiology=pd.DataFrame(columns=["year_bucket", "specimen", "charttime"]),
        prescriptions=pd.DataFrame(columns=["stay_id", "year_bucket", "hour"]),
        stay_cultures=pd.DataFrame(columns=["stay_id", "year_bucket", "hour"]),
    )


def _micro(rows) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=["year_bucket", "specimen", "charttime"])


# ── Specimen changes ───────────────────────────────────────────────────────────

@pytest.mark.unit
@pytest.mark.parametrize("specimen, counts, change, label", [
    ("SWAB", (92304, 79169, 68363, 39677), -52627, "-57%"),
    ("MRSA SCREEN", (39086, 30541, 11022, 5657), -33429, "-86%"),
    ("Blood (LYME)", (0, 0, 1289, 3815), 3815, "+100%"),
    ("URINE", (500, 400, 450, 500), 0, "0%"),
])
def test_change_row_from_counts(specimen, counts, change, label):
    """Change and percent label follow from the four bucket counts."""
    row = SpecimenChangeRow.from_counts(specimen, counts)
    assert row.change == change
    assert row.pct_label == label


@pytest.mark.unit
def test_change_must_be_last_minus_first():
    """A change that is not last minus first is rejected."""
    with pytest.raises(ValueError):
        SpecimenChangeRow(specimen="SWAB", counts=(10, 0, 0, 4), change=5, pct_change=0.5)


@pytest.mark.unit
def test_change_rows_sort_by_absolute_change_then_name():
    """Rows sort by absolute change, ties by specimen name, then truncate."""
    rows = specimen_change_rows({
        "B": (10, 0, 0, 0), "A": (0, 0, 0, 10), "C": (5, 0, 0, 30), "D": (1, 1, 1, 1),
    }, top_n=3)
    assert [r.specimen for r in rows] == ["C", "A", "B"]


@pytest.mark.unit
def test_specimen_counts_fill_missing_buckets():
    """Specimens absent from a bucket count zero there."""
    t = datetime(2010, 1, 1, 10)
    events = _micro([(FIRST, "SWAB", t), (FIRST, "SWAB", t), (LAST, "URINE", t)])
    assert specimen_counts(events) == {"SWAB": (2, 0, 0, 0), "URINE": (0, 0, 0, 1)}
    assert [r.specimen for r in specimen_change_table(events)] == ["SWAB", "URINE"]


# ── Clock hour ─────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_hour_of_day_histogram_and_daytime_share():
    """Clock-hour bins are [h, h+1); the daytime share counts 09:00 to 16:59."""
    events = _micro([
        (FIRST, "SWAB", datetime(2010, 1, 1, 9, 0)),
        (FIRST, "SWAB", datetime(2010, 1, 1, 16, 59)),
        (FIRST, "SWAB", datetime(2010, 1, 1, 17, 0)),
        (FIRST, "SWAB", datetime(2010, 1, 2, 3, 30)),
    ])
    series = hour_of_day_histogram(events)

    first = series[FIRST]
    assert first.counts[9] == first.counts[16] == first.counts[17] == first.counts[3] == 1
    assert first.total == 4
    assert daytime_share(first) == 0.5
    assert first.daytime_share == 0.5
    assert first.mean is None
    assert sum(first.normalized) == pytest.approx(1.0)

    empty = series[LAST]
    assert empty.total == 0 and empty.normalized is None
    assert daytime_share(empty) == empty.daytime_share == 0.0


# ── Stay-relative trends ───────────────────────────────────────────────────────

@pytest.mark.unit
def test_stay_trend_bins_hours_and_normalises_per_stay():
    """Stay-hour bins cover [0, 240) and divide by the bucket's stay count."""
    orders = pd.DataFrame({
        "stay_id": ["1", "1", "2", "2", "3"],
        "year_bucket": [FIRST, FIRST, FIRST, FIRST, LAST],
        "hour": [0.5, 0.9, 239.99, 240.0, -1.0],
    })
    series = antibiotics_trend(orders, {FIRST: 2, LAST: 1})

    first = series[FIRST]
    assert len(first.counts) == STAY_HOURS
    assert first.counts[0] == 2 and first.counts[239] == 1
    assert first.total == 3
    assert first.per_stay[0] == 1.0
    assert series[LAST].total == 0
    assert series[YEAR_BUCKETS[1]].per_stay is None


# ── Onset distribution ─────────────────────────────────────────────────────────

@pytest.mark.unit
def test_onset_distribution_uses_positive_stays_only():
    """Only positive stays enter the onset histogram; empty buckets are flagged."""
    labels = pd.DataFrame({
        "stay_id": ["1", "2", "3", "4"],
        "year_bucket": [FIRST, FIRST, FIRST, LAST],
        "label": [1, 1, 0, 0],
        "onset_time": [10.25, 30.5, 12.0, np.nan],
    })
    series = onset_distribution(labels)

    assert series[FIRST].total == 2
    assert series[FIRST].counts[10] == series[FIRST].counts[30] == 1
    assert series[FIRST].mean == pytest.approx(20.375)
    assert series[LAST].flagged and series[LAST].total == 0
    assert series[LAST].note == "no positive stays in bucket"


# ── Inputs ─────────────────────────────────────────────────────────────────────

@pytest.mark.integration
def test_load_drift_inputs_from_tables(tables, settings):
    """Drift inputs keep labeled stays, antibiotic orders and all cultures."""
    tables.stay("3000", "1000", "2000")
    tables.stay("3001", "1001", "2001", bucket=LAST)
    tables.stay("3002", "1002", "2002")                       # not labeled
    tables.antibiotic("2000", 5)
    tables.antibiotic("2000", 6, drug="Heparin", gsn="012345")
    tables.culture("2000", 2, specimen="URINE")
    tables.culture("2001", 1, specimen="SWAB")
    tables.culture("2002", 3, specimen="MRSA SCREEN")
    root = tables.write()
    labels = pd.DataFrame({"stay_id": ["3000", "3001"], "year_bucket": [FIRST, LAST],
                           "label": [0, 0], "onset_time": [30.0, 20.0]})

    inputs = load_drift_inputs(labels, root, settings)

    assert sorted(inputs.microbiology["specimen"]) == ["MRSA SCREEN", "SWAB", "URINE"]
    assert inputs.prescriptions[["stay_id", "hour"]].values.tolist() == [["3000", 5.0]]
    assert sorted(inputs.stay_cultures["hour"]) == [1.0, 2.0]
    assert inputs.n_stays == {FIRST: 1, LAST: 1}


# ── Report ─────────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_empty_report_summary():
    """A report with no events still lists every bucket."""
    report = build_drift_report(_empty_inputs())
    assert report.n_series == 0
    text = summary_markdown(report)
    assert "No events in any bucket" in text
    assert "No microbiology events." in text
    for bucket in YEAR_BUCKETS:
        assert f"| {bucket} | 0 | n/a | no positive stays in bucket |" in text


@pytest.mark.unit
def test_report_files_are_byte_stable(tmp_path):
    """Report files are byte-identical across thread counts."""
    inputs = _empty_inputs()
    inputs.labels = pd.DataFrame({"stay_id": ["1"], "year_bucket": [FIRST], "label": [1], "onset_time": [14.0]})
    inputs.microbiology = _micro([(FIRST, "SWAB", datetime(2010, 1, 1, 10)),
                                  (LAST, "SWAB", datetime(2018, 1, 1, 22))])

    first = emit_report(build_drift_report(inputs, threads=1), tmp_path / "a")
    second = emit_report(build_drift_report(inputs, threads=4), tmp_path / "b")

    assert len(first) == 16
    assert [p.name for p in first] == [p.name for p in second]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), a.name
    changes = pd.read_csv(tmp_path / "a" / "specimen_changes.csv")
    assert changes.loc[0, "pct_change"] == "0%"


@pytest.mark.unit
def test_svg_keeps_labels_as_escaped_text(tmp_path):
    """Chart titles and labels are escaped SVG text."""
    path = charts.bar_chart(tmp_path / "bars.svg", "A < B", [("x&y", -3.0), ("z", 1.0)])
    chart = path.read_text()
    assert "A &lt; B" in chart and "x&amp;y" in chart
    assert "<svg" in chart and chart.rstrip().endswith("</svg>")
