"""
tests/test_features.py
Tests for hourly aggregation, simple imputation, the static encoder and ICD flags,
train-only standardisation, and feature-store extraction from tables.
"""

from datetime import timedelta

import numpy as np
import pandas as pd
import pytest

from services.cohort.service import build_anchor, build_cohort
from services.features.hourly import aggregate_frame, aggregate_hourly, finish_aggregation, flatten, impute_simple, unflatten
from services.features.specs import load_featureset
from services.features.standardize import Standardizer
from services.features.static import StaticEncoder, build_static, icd_flags
from services.features.store import extract_feature_store, read_feature_store, write_feature_store
from services.ingest.registry import build_item_registry
from services.ingest.tables import MimicAdapter
from shared.exceptions import DimensionMismatchError, EmptySplitError, FeatureSpecError
from shared.models.models import HourlyMatrix, ModelInput
from shared.schemas.schemas import (
    EventRecord,
    FeatureSetSpec,
    HourlyFeature,
    IcdFeature,
    ManifestRow,
    PatientRecord,
    StaticFeature,
)
from tests.conftest import T0

SMALL_SPEC = FeatureSetSpec(
    name="custom",
    hourly_features=[
        HourlyFeature(name="heart rate", item_ids=("220045",), aggregation="mean"),
        HourlyFeature(name="drains", item_ids=("225447",), aggregation="sum"),
    ],
    static_features=[
        StaticFeature(name="age", source="patients", column="anchor_age", encoding="real"),
        StaticFeature(name="gender", source="patients", column="gender", encoding="one_hot"),
    ],
    icd_features=[
        IcdFeature(name="diabetes", codes=("E11",), icd_version=10),
        IcdFeature(name="hiv", codes=("42",), icd_version=9),
    ],
)


def _event(item: str, hours: float, value=None) -> EventRecord:
    return EventRecord(stay_id="1", source="chart", item_id=item, value=value,
                       charttime=T0 + timedelta(hours=hours))


# ── Aggregation ────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_mean_and_sum_rules(settings):
    """Mean features average within the hour; sum features count value-less events as 1."""
    registry = build_item_registry(SMALL_SPEC)
    anchor = build_anchor("1", 30.0, "sepsis", settings)          # window [0, 24)
    events = [
        _event("220045", 0.2, 80.0), _event("220045", 0.7, 90.0),
        _event("225447", 1.5), _event("225447", 1.6),
        _event("220045", 25.0, 200.0),                             # after window end
        _event("999999", 2.0, 1.0),                                # unmapped
    ]
    matrix = aggregate_hourly(events, registry, anchor, T0, SMALL_SPEC.hourly_names)

    assert matrix.values[0, 0] == pytest.approx(85.0)
    assert matrix.values[1, 1] == 2.0
    assert matrix.present.sum() == 2
    assert np.isnan(matrix.values[23]).all()


@pytest.mark.unit
def test_streaming_aggregation_matches_per_stay_path(settings):
    """Chunked frame aggregation equals the per-stay event path."""
    registry = build_item_registry(SMALL_SPEC)
    anchor = build_anchor("1", 20.0, "sepsis", settings)          # window [-10, 14)
    rng = np.random.default_rng(3)
    hours = np.round(rng.uniform(-2, 16, size=40), 3)
    items = rng.choice(["220045", "225447"], size=40)
    values = [float(v) if i == "220045" else None for i, v in zip(items, rng.normal(80, 10, size=40))]
    events = [_event(i, h, v) for i, h, v in zip(items, hours, values)]

    expected = aggregate_hourly(events, registry, anchor, T0, SMALL_SPEC.hourly_names)

    frame = pd.DataFrame({
        "stay_id": "1",
        "item_id": items,
        "value": [np.nan if v is None else v for v in values],
        "charttime": [T0 + timedelta(hours=float(h)) for h in hours],
    })
    index = {n: j for j, n in enumerate(SMALL_SPEC.hourly_names)}
    # two chunks, summed like the store does
    parts = [
        aggregate_frame(chunk, registry, index, pd.Series({"1": anchor.window_start}),
                        pd.Series({"1": pd.Timestamp(T0)}))
        for chunk in (frame.iloc[:17], frame.iloc[17:])
    ]
    total = pd.concat(parts).groupby(["row", "feature"])[["sum", "count"]].sum()
    sums = np.zeros((24, 2))
    counts = np.zeros((24, 2))
    for (row, feature), rec in total.iterrows():
        sums[row, feature] = rec["sum"]
        counts[row, feature] = rec["count"]
    got = finish_aggregation(sums, counts, ["mean", "sum"])

    np.testing.assert_array_equal(got.present, expected.present)
    np.testing.assert_allclose(got.values, expected.values, equal_nan=True)


# ── Imputation ─────────────────────────────────────────────────────────────────

def _matrix(values, present) -> HourlyMatrix:
    return HourlyMatrix(values=np.asarray(values, dtype=float), present=np.asarray(present, dtype=bool))


@pytest.mark.unit
def test_forward_fill_with_flags_and_elapsed_hours():
    """Values carry forward; flags mark observations; elapsed hours count since the last one."""
    values = np.full((24, 1), np.nan)
    present = np.zeros((24, 1), dtype=bool)
    values[2, 0], values[5, 0] = 10.0, 20.0
    present[2, 0] = present[5, 0] = True

    block = impute_simple(_matrix(values, present))
    assert block[:7, 0].tolist() == [0, 0, 10, 10, 10, 20, 20]
    assert block[:7, 1].tolist() == [0, 0, 1, 0, 0, 1, 0]
    assert block[:7, 2].tolist() == [1, 2, 0, 1, 2, 0, 1]


@pytest.mark.unit
def test_pad_rows_are_zero_and_never_seed_the_fill():
    """Pad rows are zero and do not start a forward fill."""
    values = np.full((24, 1), np.nan)
    values[:3] = 0.0
    present = np.zeros((24, 1), dtype=bool)
    block = impute_simple(_matrix(values, present), pad_hours=3)
    assert np.all(block[:3] == 0.0)
    assert block[3].tolist() == [0.0, 0.0, 1.0]
    assert block[23, 2] == 21.0


@pytest.mark.unit
def test_imputation_invariants_on_random_matrices():
    """Imputed blocks are finite and keep observed values and flags."""
    rng = np.random.default_rng(0)
    for _ in range(20):
        present = rng.random((24, 4)) < 0.3
        values = np.where(present, rng.normal(size=(24, 4)), np.nan)
        block = impute_simple(_matrix(values, present))
        vals, flags, dt = block[:, :4], block[:, 4:8], block[:, 8:]

        assert not np.isnan(block).any()
        np.testing.assert_array_equal(flags.astype(bool), present)
        np.testing.assert_array_equal(vals[present], values[present])
        assert np.all((dt == 0) == present)
        assert np.all(dt >= 0)


# ── Flat layout ────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_flat_layout_is_hour_major_with_static_last():
    """The flat vector is hour-major with the static block last."""
    hourly = np.arange(24 * 6, dtype=float).reshape(24, 6)
    flat = flatten(ModelInput(hourly=hourly, static=np.array([-1.0, -2.0])))
    assert flat.shape == (24 * 6 + 2,)
    assert flat[:6].tolist() == hourly[0].tolist()
    assert flat[-2:].tolist() == [-1.0, -2.0]
    np.testing.assert_array_equal(unflatten(flat, 2, 2).hourly, hourly)


@pytest.mark.unit
def test_unflatten_rejects_wrong_length():
    """A flat vector of the wrong length cannot be unflattened."""
    with pytest.raises(DimensionMismatchError):
        unflatten(np.zeros(10), n_features=2, n_static=2)


# ── Static vector ──────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_icd_flags_match_prefix_and_version():
    """ICD flags need a code prefix and the same ICD version."""
    features = SMALL_SPEC.icd_features
    assert icd_flags([("E11.9", 10)], features).tolist() == [1.0, 0.0]
    assert icd_flags([("E119", 9)], features).tolist() == [0.0, 0.0]
    assert icd_flags([("4200", 9), ("I10", 10)], features).tolist() == [0.0, 1.0]


@pytest.mark.unit
def test_encoder_vocabulary_is_frozen_at_fit():
    """Categories unseen at fit encode as all zeros."""
    encoder = StaticEncoder(SMALL_SPEC).fit([
        {"age": 40, "gender": "F", "icd10:diabetes": 1.0, "icd9:hiv": 0.0},
        {"age": 70, "gender": "M", "icd10:diabetes": 0.0, "icd9:hiv": 0.0},
    ])
    assert encoder.channel_names == ["age", "gender=F", "gender=M", "icd10:diabetes", "icd9:hiv"]
    assert encoder.continuous_mask.tolist() == [True, False, False, False, False]
    unseen = encoder.transform_one({"age": 55, "gender": "X", "icd10:diabetes": 1.0})
    assert unseen.tolist() == [55.0, 0.0, 0.0, 1.0, 0.0]


@pytest.mark.unit
def test_build_static_from_records():
    """Static vectors build from patient, admission and diagnosis records."""
    patient = PatientRecord(patient_id="1", anchor_age=62, gender="F", anchor_year_group="2008-2010")
    diagnoses = [("E11.9", 10)]
    assert build_static(patient, None, diagnoses, SMALL_SPEC).tolist() == [62.0, 1.0, 1.0, 0.0]

    encoder = StaticEncoder(SMALL_SPEC).fit([{"gender": "F"}, {"gender": "M"}])
    vector = build_static(patient, None, diagnoses, SMALL_SPEC, encoder=encoder)
    assert vector.tolist() == [62.0, 1.0, 0.0, 1.0, 0.0]


@pytest.mark.unit
def test_epic_minus_icd_drops_exactly_the_icd_columns():
    """epic_minus_icd is epic without its ICD flags."""
    epic = load_featureset("epic")
    minus = load_featureset("epic_minus_icd")
    rows = [{"age": 60, "gender": "F", "ethnicity": "WHITE", "marital status": "SINGLE"}]
    epic_dim = StaticEncoder(epic).fit(rows).dim
    minus_dim = StaticEncoder(minus).fit(rows).dim

    assert minus.icd_features == []
    assert minus.hourly_names == epic.hourly_names
    assert minus_dim == epic_dim - len(epic.icd_features)


@pytest.mark.unit
def test_unknown_feature_set_name():
    """An unknown feature set name is rejected."""
    with pytest.raises(FeatureSpecError):
        load_featureset("no_such_set")


@pytest.mark.unit
def test_custom_feature_set_can_extend_a_shipped_one(tmp_path):
    """A custom file can extend a shipped set and drop its ICD flags."""
    path = tmp_path / "mine.toml"
    path.write_text('name = "mine"\nextends = "epic"\nexclude_icd = true\n')
    spec = load_featureset(path)
    assert spec.name == "custom"
    assert spec.icd_features == []


@pytest.mark.unit
def test_circular_extends_is_rejected(tmp_path):
    """Feature sets that extend each other are rejected."""
    a, b = tmp_path / "a.toml", tmp_path / "b.toml"
    a.write_text(f'extends = "{b}"\n')
    b.write_text(f'extends = "{a}"\n')
    with pytest.raises(FeatureSpecError, match="circular"):
        load_featureset(a)


# ── Standardisation ────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_standardizer_uses_training_moments_only():
    """Continuous channels scale by training moments; flags pass through."""
    rng = np.random.default_rng(1)
    hourly = np.zeros((6, 24, 6))
    hourly[:, :, 0] = rng.normal(50, 5, size=(6, 24))
    hourly[:, :, 1] = 7.0                                       # constant channel
    hourly[:, :, 2:4] = rng.random((6, 24, 2)) < 0.5            # flags
    hourly[:, :, 4:] = rng.integers(0, 24, size=(6, 24, 2))     # hours since
    static = np.column_stack([rng.normal(60, 10, 6), np.ones(6)])

    scaler = Standardizer.fit(hourly[:4], static[:4], continuous_mask=[True, False])
    h, s = scaler.transform_arrays(hourly, static)

    train = h[:4, :, 0]
    assert train.mean() == pytest.approx(0.0, abs=1e-9)
    assert train.std() == pytest.approx(1.0)
    np.testing.assert_array_equal(h[:, :, 1], 7.0)
    np.testing.assert_array_equal(h[:, :, 2:4], hourly[:, :, 2:4])
    np.testing.assert_allclose(h[:, :, 4:], hourly[:, :, 4:] / 24.0)
    assert s[:4, 0].mean() == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_array_equal(s[:, 1], 1.0)


@pytest.mark.unit
def test_standardizer_rejects_empty_training_split():
    """Fitting on no stays is an empty-split error."""
    with pytest.raises(EmptySplitError):
        Standardizer.fit(np.zeros((0, 24, 3)), np.zeros((0, 1)))


@pytest.mark.unit
def test_standardizer_checks_widths():
    """Inputs of another width are rejected."""
    scaler = Standardizer.fit(np.ones((2, 24, 3)), np.ones((2, 1)))
    with pytest.raises(DimensionMismatchError):
        scaler.transform_arrays(np.ones((2, 24, 6)), np.ones((2, 1)))


# ── Feature store ──────────────────────────────────────────────────────────────

@pytest.mark.integration
def test_extract_feature_store_from_tables(tables, tmp_path, settings):
    """The feature store aggregates, imputes, pads and round-trips through its files."""
    tables.stay("3000", "1000", "2000", los_h=72)
    tables.chart("3000", "220045", 1.2, value=80)
    tables.chart("3000", "220045", 1.8, value=100)
    tables.chart("3000", "220045", 3.5, value=90)
    tables.stay("3001", "1001", "2001", los_h=48)
    tables.chart("3001", "220045", 1.0, value=70)
    adapter = MimicAdapter(tables.write())
    stays, _ = build_cohort(adapter)
    manifest = [
        ManifestRow(stay_id="3000", label=1, onset_time=30.0, year_bucket="2008-2010", pad_hours=0),
        ManifestRow(stay_id="3001", label=0, onset_time=10.0, year_bucket="2008-2010", pad_hours=20),
    ]
    spec = load_featureset("dascena")
    store = extract_feature_store(adapter, stays, manifest, spec, "sepsis", settings)

    f = spec.n_hourly
    hr = spec.hourly_names.index("heart rate")
    assert store.hourly.shape == (2, 24, 3 * f)
    assert store.stay_ids == ["3000", "3001"]

    first = store.hourly[0]
    assert first[1, hr] == pytest.approx(90.0)
    assert first[1, f + hr] == 1.0
    assert (first[2, hr], first[2, f + hr], first[2, 2 * f + hr]) == (90.0, 0.0, 1.0)
    assert first[3, hr] == 90.0
    assert first[0, hr] == 0.0

    second = store.hourly[1]
    assert np.all(second[:20] == 0.0)
    assert second[21, hr] == 70.0
    assert store.static.set_index("stay_id").loc["3000", "age"] == 60

    out = tmp_path / "features"
    out.mkdir()
    paths = write_feature_store(store, out)
    assert {p.name for p in paths} == {"features.bin", "static.csv", "featureset.json"}
    back = read_feature_store(out)
    np.testing.assert_array_equal(back.hourly, store.hourly)
    assert back.spec == spec


@pytest.mark.integration
def test_icd_flags_reach_the_static_table(tables, settings):
    """ICD flags land in epic's static table and are absent from epic_minus_icd."""
    tables.stay("3000", "1000", "2000", los_h=72, start=T0.replace(year=2016))
    tables.diagnosis("2000", "E119", 10)
    adapter = MimicAdapter(tables.write())
    stays, _ = build_cohort(adapter)
    manifest = [ManifestRow(stay_id="3000", label=0, onset_time=40.0, year_bucket="2008-2010", pad_hours=0)]

    epic = extract_feature_store(adapter, stays, manifest, load_featureset("epic"), "sepsis", settings)
    minus = extract_feature_store(adapter, stays, manifest, load_featureset("epic_minus_icd"), "sepsis", settings)

    assert epic.static.loc[0, "icd10:diabetes"] == 1.0
    assert epic.static.loc[0, "icd10:hypertension"] == 0.0
    assert not any(c.startswith("icd") for c in minus.static.columns)
