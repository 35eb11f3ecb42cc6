"""
tests/test_ingest.py
Tests for table schemas, the MIMIC-IV layout adapter, whole-table loaders and the
chunked event stream: skip accounting, chunk independence and source quirks.
"""

import pandas as pd
import pytest

from services.ingest.loaders import load_diagnoses, load_icustays, load_patients
from services.ingest.registry import build_item_registry
from services.ingest.streaming import IngestStats, iter_event_frames, stream_events
from services.ingest.tables import MimicAdapter, validate_header
from services.features.specs import load_featureset
from shared.exceptions import FeatureSpecError, IngestIOError, InputMissingError, SchemaError
from shared.schemas.schemas import FeatureSetSpec, HourlyFeature
from tests.conftest import stamp


# ── Headers and layout ─────────────────────────────────────────────────────────

@pytest.mark.unit
def test_validate_header_applies_mimic_renames():
    """MIMIC-IV 'race' is read as the ethnicity column."""
    columns = validate_header("admissions", ["hadm_id", "subject_id", "race", "marital_status", "deathtime"])
    assert "ethnicity" in columns
    assert "race" not in columns


@pytest.mark.unit
def test_validate_header_missing_column():
    """A missing required column is a schema error naming it."""
    with pytest.raises(SchemaError, match="anchor_year_group"):
        validate_header("patients", ["subject_id", "anchor_age", "gender"])


@pytest.mark.unit
def test_labevents_need_a_join_column():
    """labevents must carry hadm_id or stay_id."""
    with pytest.raises(SchemaError, match="at least one of"):
        validate_header("labevents", ["itemid", "charttime", "valuenum"])


@pytest.mark.unit
def test_adapter_missing_directory(tmp_path):
    """A missing tables directory is an input error."""
    with pytest.raises(InputMissingError):
        MimicAdapter(tmp_path / "nowhere")


@pytest.mark.unit
def test_adapter_reads_gzipped_hosp_layout(tmp_path):
    """Tables under hosp/ in .csv.gz are found; spaced year groups are normalised."""
    (tmp_path / "hosp").mkdir()
    pd.DataFrame([
        {"subject_id": "1", "anchor_age": 40, "gender": "F", "anchor_year_group": "2008 - 2010"},
        {"subject_id": "2", "anchor_age": 50, "gender": "M", "anchor_year_group": "2017 - 2019"},
    ]).to_csv(tmp_path / "hosp" / "patients.csv.gz", index=False)

    adapter = MimicAdapter(tmp_path)
    assert adapter.path("patients").name == "patients.csv.gz"
    assert not adapter.has("icustays")

    patients = load_patients(adapter.path("patients"))
    assert [p.anchor_year_group for p in patients] == ["2008-2010", "2017-2019"]


@pytest.mark.unit
def test_adapter_rejects_unknown_lab_join_key(tmp_path):
    """Labs join on hadm_id or stay_id only."""
    with pytest.raises(SchemaError):
        MimicAdapter(tmp_path, lab_join_key="subject_id")


# ── Whole-table loaders ────────────────────────────────────────────────────────

@pytest.mark.unit
def test_unknown_year_group_is_schema_error(tables):
    """An anchor year group outside the four buckets is a schema error."""
    tables.add("patients", subject_id="1", anchor_age=40, gender="F", anchor_year_group="2020-2022")
    root = tables.write()
    with pytest.raises(SchemaError, match="2020-2022"):
        load_patients(root / "patients.csv")


@pytest.mark.unit
def test_malformed_patient_rows_are_counted(tables):
    """Bad patient rows are skipped and counted as malformed."""
    tables.add("patients", subject_id="1", anchor_age=40, gender="F", anchor_year_group="2008-2010")
    tables.add("patients", subject_id="2", anchor_age=-3, gender="F", anchor_year_group="2008-2010")
    tables.add("patients", subject_id="3", anchor_age="abc", gender="M", anchor_year_group="2008-2010")
    root = tables.write()

    stats = IngestStats(table="patients")
    patients = load_patients(root / "patients.csv", stats)
    assert [p.patient_id for p in patients] == ["1"]
    assert stats.total == 3
    assert stats.malformed == 2


@pytest.mark.unit
def test_icustays_with_outtime_before_intime_are_dropped(tables):
    """Stays ending before they start are dropped."""
    tables.add("icustays", stay_id="1", subject_id="1", hadm_id="1", intime=stamp(0), outtime=stamp(30))
    tables.add("icustays", stay_id="2", subject_id="2", hadm_id="2", intime=stamp(10), outtime=stamp(5))
    root = tables.write()

    stays = load_icustays(root / "icustays.csv")
    assert [s.stay_id for s in stays] == ["1"]
    assert stays[0].los_hours == pytest.approx(30.0)


# ── Event stream ───────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_chart_stream_accounts_for_every_skipped_row(tables, settings):
    """Each dropped row lands in exactly one skip counter."""
    tables.chart("3000", "220045", 1, value=80)
    tables.chart("3000", "220045", 2, value="abc")           # non-numeric
    tables.chart("3000", "224007", 3, text="Yes")            # text observation, kept
    tables.chart("3000", "220045", 4)                        # no value at all
    tables.chart("9999", "220045", 1, value=70)              # outside the cohort
    tables.chart("3000", "", 1, value=1)                     # no item id
    root = tables.write()

    stream = stream_events(root / "chartevents.csv", "chart", {"3000"}, settings=settings)
    records = list(stream)

    assert [(r.item_id, r.value, r.value_text) for r in records] == [
        ("220045", 80.0, None),
        ("224007", None, "Yes"),
    ]
    stats = stream.stats
    assert (stats.total, stats.yielded) == (6, 2)
    assert (stats.non_numeric, stats.missing_value, stats.filtered, stats.malformed) == (1, 1, 1, 1)
    assert stats.skipped == stats.total - stats.yielded


@pytest.mark.unit
def test_chunk_size_does_not_change_the_stream(tables, settings):
    """Small chunks yield the same rows as one chunk."""
    for h in range(5):
        tables.chart("3000", "220045", h, value=60 + h)
    root = tables.write()

    small = settings.with_overrides({"ingest.chunk_rows": 2})
    frames = list(iter_event_frames(root / "chartevents.csv", "chart", settings=small))
    whole = list(iter_event_frames(root / "chartevents.csv", "chart", settings=settings))

    assert len(frames) == 3
    assert len(whole) == 1
    assert pd.concat(frames)["value"].tolist() == whole[0]["value"].tolist() == [60.0, 61.0, 62.0, 63.0, 64.0]


@pytest.mark.unit
def test_read_failure_reports_the_chunk_start(tmp_path, settings):
    """A ragged line fails its chunk; the error names that chunk's first data row."""
    path = tmp_path / "chartevents.csv"
    rows = [f"3000,220045,{stamp(h)},{60 + h},x" for h in range(4)]
    rows[3] += ",extra"
    path.write_text("stay_id,itemid,charttime,valuenum,value\n" + "\n".join(rows) + "\n")

    small = settings.with_overrides({"ingest.chunk_rows": 2})
    frames = iter_event_frames(path, "chart", settings=small)
    assert len(next(frames)) == 2
    with pytest.raises(IngestIOError) as info:
        next(frames)
    assert info.value.row == 3
    assert "chunk starting at data row 3" in str(info.value)


@pytest.mark.unit
def test_prescriptions_map_admissions_onto_stays(tables, settings):
    """First GSN of a list is the item; unmapped admissions are filtered, empty ones malformed."""
    tables.add("prescriptions", hadm_id="2000", starttime=stamp(5), drug="Vancomycin", gsn="043952 009331")
    tables.add("prescriptions", hadm_id="2999", starttime=stamp(5), drug="Vancomycin", gsn="043952")
    tables.add("prescriptions", hadm_id="", starttime=stamp(5), drug="Heparin", gsn="")
    root = tables.write()

    stats = IngestStats(table="prescriptions")
    frames = list(iter_event_frames(root / "prescriptions.csv", "prescription",
                                    hadm_to_stay={"2000": "3000"}, settings=settings, stats=stats))
    frame = pd.concat(frames)
    assert frame["stay_id"].tolist() == ["3000"]
    assert frame["item_id"].tolist() == ["043952"]
    assert frame["value_text"].tolist() == ["Vancomycin"]
    assert (stats.filtered, stats.malformed) == (1, 1)


@pytest.mark.unit
def test_microbiology_falls_back_to_chartdate(tables, settings):
    """Cultures without a charttime use their chartdate."""
    tables.add("microbiologyevents", hadm_id="2000", spec_type_desc="URINE", charttime="", chartdate="2010-03-02")
    root = tables.write()

    frame = next(iter_event_frames(root / "microbiologyevents.csv", "microbiology",
                                   hadm_to_stay={"2000": "3000"}, settings=settings))
    assert frame["charttime"].iloc[0] == pd.Timestamp("2010-03-02")
    assert frame["item_id"].iloc[0] == "URINE"


@pytest.mark.unit
def test_diagnoses_need_a_known_icd_version(tables, settings):
    """Diagnoses with a version other than 9 or 10 are dropped."""
    tables.diagnosis("2000", "4019", 9)
    tables.diagnosis("2000", "I10", 11)
    root = tables.write()

    records = list(stream_events(root / "diagnoses_icd.csv", "diagnosis",
                                 hadm_to_stay={"2000": "3000"}, settings=settings))
    assert [(r.item_id, r.icd_version) for r in records] == [("4019", 9)]
    assert load_diagnoses(root / "diagnoses_icd.csv", {"2000": "3000"}, settings=settings) == records


@pytest.mark.unit
def test_labs_join_on_stay_id_when_configured(tables, settings):
    """Labs can join on stay_id instead of hadm_id."""
    tables.lab("", "51265", 2, 180, stay_id="3000")
    root = tables.write()

    by_stay = settings.with_overrides({"ingest.lab_join_key": "stay_id"})
    frame = next(iter_event_frames(root / "labevents.csv", "lab", {"3000"}, settings=by_stay))
    assert frame["stay_id"].tolist() == ["3000"]
    assert frame["value"].tolist() == [180.0]


# ── Item registry ──────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_registry_maps_every_shipped_item_once():
    """Each item id of a shipped set maps to one feature."""
    spec = load_featureset("dascena")
    registry = build_item_registry(spec)
    assert len(registry) == sum(len(f.item_ids) for f in spec.hourly_features)
    assert {m.feature for m in registry.values()} == set(spec.hourly_names)


@pytest.mark.unit
def test_registry_rejects_an_item_mapped_twice():
    """An item id claimed by two features is rejected."""
    spec = FeatureSetSpec(name="custom", hourly_features=[
        HourlyFeature(name="heart rate", item_ids=("220045",)),
        HourlyFeature(name="pulse", item_ids=("220045",)),
    ])
    with pytest.raises(FeatureSpecError, match="220045"):
        build_item_registry(spec)
