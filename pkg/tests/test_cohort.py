"""
tests/test_cohort.py
Tests for cohort filtration order, onset anchoring of positives and controls, and the
fixed observation window that ends six hours before onset.
"""

from datetime import timedelta

import numpy as np
import pytest

from services.cohort.service import (
    CohortReport,
    assign_onset,
    build_anchor,
    build_cohort,
    event_rows,
    extract_window,
    filter_cohort,
    pad_hours_for,
    read_stays,
    stay_rng,
    write_stays,
)
from services.ingest.tables import MimicAdapter
from shared.exceptions import SchemaError
from shared.schemas.schemas import CohortStay, IcuStayRecord, PatientRecord
from tests.conftest import T0


def _patient(pid: str, age: int = 60) -> PatientRecord:
    return PatientRecord(patient_id=pid, anchor_age=age, gender="F", anchor_year_group="2008-2010")


def _icu(stay_id: str, pid: str, start_h: float, los_h: float) -> IcuStayRecord:
    intime = T0 + timedelta(hours=start_h)
    return IcuStayRecord(stay_id=stay_id, patient_id=pid, admission_id=f"h{stay_id}",
                         intime=intime, outtime=intime + timedelta(hours=los_h))


def _cohort_stay(stay_id: str = "1", los_h: float = 72.0) -> CohortStay:
    return CohortStay(stay_id=stay_id, patient_id="p", admission_id="h", age=60, year_bucket="2008-2010",
                      los_hours=los_h, intime=T0, outtime=T0 + timedelta(hours=los_h))


# ── Filtration ─────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_age_filter_is_strict():
    """Age must exceed 15; exactly 15 is excluded."""
    report = CohortReport()
    cohort = filter_cohort(
        [_patient("a", 15), _patient("b", 16)],
        [_icu("1", "a", 0, 48), _icu("2", "b", 0, 48)],
        report=report,
    )
    assert [s.stay_id for s in cohort] == ["2"]
    assert report.excluded_age == 1


@pytest.mark.unit
def test_stay_length_bounds_are_inclusive():
    """Stays of exactly 24 h and 240 h are kept."""
    patients = [_patient(p) for p in "abcd"]
    stays = [_icu("1", "a", 0, 23.9), _icu("2", "b", 0, 24), _icu("3", "c", 0, 240), _icu("4", "d", 0, 240.5)]
    report = CohortReport()
    cohort = filter_cohort(patients, stays, report=report)
    assert sorted(s.stay_id for s in cohort) == ["2", "3"]
    assert report.excluded_stay_length == 2


@pytest.mark.unit
def test_first_stay_is_chosen_after_length_filter():
    """A patient whose earliest stay is too short keeps the next eligible one."""
    patients = [_patient("a"), _patient("b")]
    stays = [
        _icu("1", "a", 0, 10),        # too short
        _icu("2", "a", 500, 48),
        _icu("3", "a", 900, 48),
        _icu("4", "b", 100, 48),
        _icu("5", "b", 50, 48),
    ]
    report = CohortReport()
    cohort = filter_cohort(patients, stays, report=report)
    assert sorted(s.stay_id for s in cohort) == ["2", "5"]
    assert report.excluded_not_first_stay == 2
    assert report.kept == 2
    assert len({s.patient_id for s in cohort}) == len(cohort)


@pytest.mark.unit
def test_stays_of_unknown_patients_are_counted():
    """A stay whose patient is missing is dropped and counted."""
    report = CohortReport()
    assert filter_cohort([_patient("a")], [_icu("1", "zz", 0, 48)], report=report) == []
    assert report.unknown_patient == 1


@pytest.mark.integration
def test_build_cohort_from_tables(tables):
    """Age and stay-length exclusions apply to stays read from tables."""
    tables.stay("3000", "1000", "2000", los_h=72, age=70, bucket="2014-2016")
    tables.stay("3001", "1001", "2001", los_h=12)
    tables.stay("3002", "1002", "2002", los_h=48, age=8)
    cohort, report = build_cohort(MimicAdapter(tables.write()))

    assert [s.stay_id for s in cohort] == ["3000"]
    assert cohort[0].year_bucket == "2014-2016"
    assert cohort[0].ethnicity is not None
    assert (report.total_stays, report.excluded_age, report.excluded_stay_length) == (3, 1, 1)


# ── Onset anchoring ────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_positive_stay_takes_its_first_onset(settings):
    """A positive stay is anchored at its earliest onset."""
    got = assign_onset(_cohort_stay(), [14.0, 30.0], stay_rng(0, "1"), settings)
    assert got == (14.0, 1)


@pytest.mark.unit
def test_onset_before_gap_is_rejected(settings):
    """No redraw: an early positive onset drops the stay."""
    assert assign_onset(_cohort_stay(), [3.0], stay_rng(0, "1"), settings) is None


@pytest.mark.unit
def test_control_onset_is_uniform_over_stay_at_minute_resolution(settings):
    """Control onsets fall in [gap, LOS] on whole minutes and spread evenly."""
    stay = _cohort_stay(los_h=30.0)
    draws = [assign_onset(stay, [], np.random.default_rng(i), settings).onset_time for i in range(300)]
    assert min(draws) >= 6.0
    assert max(draws) <= 30.0
    assert all(abs(d * 60 - round(d * 60)) < 1e-6 for d in draws)
    # roughly uniform over [6, 30]
    assert 15.0 < float(np.mean(draws)) < 21.0


@pytest.mark.unit
def test_control_draw_depends_only_on_seed_and_stay(settings):
    """Drawing for other stays does not change a stay's control onset."""
    stay = _cohort_stay("42")
    first = assign_onset(stay, [], stay_rng(5, "42"), settings)
    assign_onset(_cohort_stay("7"), [], stay_rng(5, "7"), settings)
    again = assign_onset(stay, [], stay_rng(5, "42"), settings)
    assert first == again


# ── Observation window ─────────────────────────────────────────────────────────

@pytest.mark.unit
def test_sepsis_window_ends_gap_before_onset(settings):
    """The sepsis window is the 24 h ending six hours before onset."""
    anchor = build_anchor("1", 30.0, "sepsis", settings)
    assert (anchor.window_start, anchor.window_end) == (0.0, 24.0)
    assert pad_hours_for(anchor) == 0


@pytest.mark.unit
def test_early_onset_window_is_padded(settings):
    """A window starting before intime is padded by the missing hours."""
    anchor = build_anchor("1", 10.0, "sepsis", settings)
    assert (anchor.window_start, anchor.window_end) == (-20.0, 4.0)
    assert pad_hours_for(anchor) == 20


@pytest.mark.unit
def test_window_ending_before_intime_is_invalid(settings):
    """A window that ends before intime cannot be built."""
    with pytest.raises(ValueError):
        build_anchor("1", 5.0, "sepsis", settings)


@pytest.mark.unit
def test_los_and_mortality_use_first_day(settings):
    """LOS and mortality tasks read the first 24 h of the stay."""
    for task in ("los", "mortality"):
        anchor = build_anchor("1", 50.0, task, settings)
        assert (anchor.window_start, anchor.window_end) == (0.0, 24.0)


@pytest.mark.unit
def test_event_rows_keep_only_in_window_in_stay_events(settings):
    """Event hours map to window rows; pre-intime and post-window events are invalid."""
    anchor = build_anchor("1", 10.0, "sepsis", settings)
    rows, valid = event_rows(np.array([-1.0, 0.0, 0.5, 3.99, 4.0, 5.0]), anchor)
    assert rows.tolist() == [19, 20, 20, 23, 24, 25]
    assert valid.tolist() == [False, True, True, True, False, False]


@pytest.mark.unit
def test_extract_window_pads_before_intime_and_leaves_gaps_missing(settings):
    """Pad rows are zero and absent; unobserved hours stay missing."""
    anchor = build_anchor("1", 10.0, "sepsis", settings)
    window = extract_window(anchor, {21: [80.0, None], 5: [1.0, 1.0]}, n_features=2, label=1)

    assert window.pad_hours == 20
    assert np.all(window.hourly[:20] == 0.0)
    assert not window.present[:20].any()
    assert window.hourly[21, 0] == 80.0 and window.present[21, 0]
    assert np.isnan(window.hourly[21, 1])
    assert np.isnan(window.hourly[22]).all()


# ── Stage files ────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_stays_file_keeps_fields(tmp_path):
    """Stays written to CSV read back with their fields."""
    stay = _cohort_stay("9", 50.5)
    path = write_stays([stay], tmp_path / "stays.csv")
    (back,) = read_stays(path)
    assert (back.stay_id, back.los_hours, back.intime, back.year_bucket) == ("9", 50.5, T0, "2008-2010")


@pytest.mark.unit
def test_stays_file_missing_column(tmp_path):
    """A stays file without a required column is a schema error."""
    path = tmp_path / "stays.csv"
    path.write_text("stay_id,patient_id\n1,2\n")
    with pytest.raises(SchemaError):
        read_stays(path)
