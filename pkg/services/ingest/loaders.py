"""
services/ingest/loaders.py
Whole-table loaders for the small per-patient tables (patients, icustays, admissions)
and the diagnoses loader built on the event stream.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional

import pandas as pd

from config.settings import Settings
from services.ingest.streaming import IngestStats, _parse_times, stream_events
from services.ingest.tables import normalise_frame, read_header
from shared.exceptions import IngestIOError, SchemaError
from shared.schemas.schemas import (
    YEAR_BUCKETS,
    AdmissionRecord,
    EventRecord,
    EventSource,
    IcuStayRecord,
    PatientRecord,
)

logger = logging.getLogger(__name__)


def _read_table(table: str, path: Path) -> pd.DataFrame:
    path = Path(path)
    read_header(table, path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except (pd.errors.ParserError, OSError, UnicodeDecodeError, EOFError) as exc:
        raise IngestIOError(f"{table}: read failed in {path}: {exc}") from exc
    df = normalise_frame(table, df)
    return df.apply(lambda col: col.str.strip()) if len(df) else df


def _finish(stats: IngestStats, kept: int) -> None:
    stats.yielded += kept
    stats.log_summary()


# ── Patients ──────────────────────────────────────────────────

def load_patients(path: Path, stats: Optional[IngestStats] = None) -> List[PatientRecord]:
    """One PatientRecord per well-formed row; an unknown year group is a schema error."""
    stats = stats if stats is not None else IngestStats(table="patients")
    df = _read_table("patients", path)
    stats.total += len(df)
    if not len(df):
        _finish(stats, 0)
        return []

    groups = df["anchor_year_group"]
    unknown = sorted(set(groups[groups != ""]) - set(YEAR_BUCKETS))
    if unknown:
        raise SchemaError(f"patients: unparseable anchor_year_group value(s): {', '.join(unknown[:5])}")

    age = pd.to_numeric(df["anchor_age"], errors="coerce")
    malformed = (
        (df["subject_id"] == "") | (groups == "") | age.isna() | (age < 0) | (age % 1 != 0)
    )
    stats.malformed += int(malformed.sum())
    good = df.loc[~malformed]
    records = [
        PatientRecord(
            patient_id=row.subject_id,
            anchor_age=int(float(row.anchor_age)),
            gender=row.gender,
            anchor_year_group=row.anchor_year_group,
        )
        for row in good.itertuples(index=False)
    ]
    _finish(stats, len(records))
    return records


# ── ICU stays ─────────────────────────────────────────────────

def load_icustays(path: Path, stats: Optional[IngestStats] = None) -> List[IcuStayRecord]:
    stats = stats if stats is not None else IngestStats(table="icustays")
    df = _read_table("icustays", path)
    stats.total += len(df)
    if not len(df):
        _finish(stats, 0)
        return []
    intime = _parse_times(df["intime"])
    outtime = _parse_times(df["outtime"])
    malformed = (
        (df["stay_id"] == "") | (df["subject_id"] == "") | (df["hadm_id"] == "")
        | intime.isna() | outtime.isna() | (outtime <= intime)
    )
    stats.malformed += int(malformed.sum())
    records = [
        IcuStayRecord(
            stay_id=df.at[i, "stay_id"],
            patient_id=df.at[i, "subject_id"],
            admission_id=df.at[i, "hadm_id"],
            intime=intime[i].to_pydatetime(),
            outtime=outtime[i].to_pydatetime(),
        )
        for i in df.index[~malformed]
    ]
    _finish(stats, len(records))
    return records


# ── Admissions ────────────────────────────────────────────────

def load_admissions(path: Path, stats: Optional[IngestStats] = None) -> List[AdmissionRecord]:
    stats = stats if stats is not None else IngestStats(table="admissions")
    df = _read_table("admissions", path)
    stats.total += len(df)
    if not len(df):
        _finish(stats, 0)
        return []
    deathtime = _parse_times(df["deathtime"])
    # a non-empty deathtime that fails to parse makes the row unusable for mortality labels
    malformed = (df["hadm_id"] == "") | (df["subject_id"] == "") | ((df["deathtime"] != "") & deathtime.isna())
    stats.malformed += int(malformed.sum())
    records = [
        AdmissionRecord(
            admission_id=df.at[i, "hadm_id"],
            patient_id=df.at[i, "subject_id"],
            ethnicity=df.at[i, "ethnicity"] or None,
            marital_status=df.at[i, "marital_status"] or None,
            deathtime=None if pd.isna(deathtime[i]) else deathtime[i].to_pydatetime(),
        )
        for i in df.index[~malformed]
    ]
    _finish(stats, len(records))
    return records


# ── Diagnoses ─────────────────────────────────────────────────

def load_diagnoses(
    path: Path,
    hadm_to_stay: Mapping[str, str],
    stay_filter: Optional[Iterable[str]] = None,
    settings: Optional[Settings] = None,
) -> List[EventRecord]:
    stream = stream_events(path, EventSource.DIAGNOSIS, stay_filter, hadm_to_stay=hadm_to_stay, settings=settings)
    return list(stream)


def hadm_to_stay_map(stays: Iterable) -> Dict[str, str]:
    """admission_id → stay_id over cohort stays (one stay per admission after filtering)."""
    mapping: Dict[str, str] = {}
    for stay in stays:
        mapping.setdefault(stay.admission_id, stay.stay_id)
    return mapping
