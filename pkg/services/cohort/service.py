"""
services/cohort/service.py
Cohort filtration (age, stay length, first stay), onset anchoring, and extraction of the
fixed 24-hour observation window that ends a gap before onset.
"""

import logging
import math
import zlib
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import Settings, settings as default_settings
from services.ingest.loaders import load_admissions, load_icustays, load_patients
from services.ingest.tables import MimicAdapter
from shared.exceptions import InputMissingError, SchemaError
from shared.models.models import WINDOW_HOURS, StayWindow
from shared.schemas.schemas import (
    AdmissionRecord,
    CohortStay,
    IcuStayRecord,
    ManifestRow,
    PatientRecord,
    Task,
    WindowAnchor,
)
from shared.utils.files import write_csv

logger = logging.getLogger(__name__)


# ── Filtration ────────────────────────────────────────────────

@dataclass
class CohortReport:
    """Exclusion counts in filtration order."""
    total_stays: int = 0
    unknown_patient: int = 0
    excluded_age: int = 0
    excluded_stay_length: int = 0
    excluded_not_first_stay: int = 0
    onset_rejected: int = 0
    kept: int = 0

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)

    def log_summary(self) -> None:
        logger.info(
            f"Cohort: {self.total_stays} stays → {self.excluded_age} excluded by age, "
            f"{self.excluded_stay_length} by stay length, {self.excluded_not_first_stay} not first stay; "
            f"{self.kept} kept"
        )
        if self.unknown_patient:
            logger.warning(f"Cohort: {self.unknown_patient} stays reference unknown patients")
        if self.onset_rejected:
            logger.warning(f"Cohort: {self.onset_rejected} stays rejected for onset before the gap")


def filter_cohort(
    patients: Sequence[PatientRecord],
    stays: Sequence[IcuStayRecord],
    admissions: Optional[Sequence[AdmissionRecord]] = None,
    settings: Optional[Settings] = None,
    report: Optional[CohortReport] = None,
) -> List[CohortStay]:
    """
    Filters applied in order: age over ``cohort.min_age`` (strict), stay length within
    [min_los_h, max_los_h], then the earliest remaining stay per patient.
    """
    cfg = (settings or default_settings).cohort
    report = report if report is not None else CohortReport()
    by_patient = {p.patient_id: p for p in patients}
    by_admission = {a.admission_id: a for a in (admissions or [])}
    report.total_stays += len(stays)

    survivors: List[IcuStayRecord] = []
    for stay in stays:
        patient = by_patient.get(stay.patient_id)
        if patient is None:
            report.unknown_patient += 1
            continue
        if patient.anchor_age <= cfg.min_age:
            report.excluded_age += 1
            continue
        if not (cfg.min_los_h <= stay.los_hours <= cfg.max_los_h):
            report.excluded_stay_length += 1
            continue
        survivors.append(stay)

    first: Dict[str, IcuStayRecord] = {}
    for stay in survivors:
        current = first.get(stay.patient_id)
        if current is None or (stay.intime, stay.stay_id) < (current.intime, current.stay_id):
            first[stay.patient_id] = stay
    report.excluded_not_first_stay += len(survivors) - len(first)

    cohort: List[CohortStay] = []
    for stay in sorted(first.values(), key=lambda s: (s.intime, s.stay_id)):
        patient = by_patient[stay.patient_id]
        admission = by_admission.get(stay.admission_id)
        cohort.append(CohortStay(
            stay_id=stay.stay_id,
            patient_id=stay.patient_id,
            admission_id=stay.admission_id,
            age=patient.anchor_age,
            year_bucket=patient.anchor_year_group,
            los_hours=stay.los_hours,
            intime=stay.intime,
            outtime=stay.outtime,
            gender=patient.gender,
            ethnicity=admission.ethnicity if admission else None,
            marital_status=admission.marital_status if admission else None,
            deathtime=admission.deathtime if admission else None,
        ))
    report.kept = len(cohort)
    return cohort


def build_cohort(adapter: MimicAdapter, settings: Optional[Settings] = None) -> Tuple[List[CohortStay], CohortReport]:
    """Load patients, ICU stays and admissions from a table directory and filter them."""
    patients = load_patients(adapter.path("patients"))
    stays = load_icustays(adapter.path("icustays"))
    admissions = load_admissions(adapter.path("admissions")) if adapter.has("admissions") else []
    report = CohortReport()
    cohort = filter_cohort(patients, stays, admissions, settings=settings, report=report)
    report.log_summary()
    return cohort, report


# ── Onset anchoring ───────────────────────────────────────────

class OnsetAssignment(NamedTuple):
    onset_time: float
    label: int


def stay_rng(seed: int, stay_id: str) -> np.random.Generator:
    """Per-stay generator so assignments do not depend on processing order."""
    return np.random.default_rng([int(seed), zlib.crc32(str(stay_id).encode("utf-8"))])


def assign_onset(
    stay: CohortStay,
    sepsis_onsets: Sequence[float],
    rng: np.random.Generator,
    settings: Optional[Settings] = None,
) -> Optional[OnsetAssignment]:
    """
    Positive stays take their first onset; controls draw uniformly on [gap, los] at minute
    resolution. Any onset earlier than the gap is rejected (None), without redraw.
    """
    gap = (settings or default_settings).cohort.gap_h
    if sepsis_onsets:
        onset = float(sepsis_onsets[0])
        label = 1
    else:
        if stay.los_hours < gap:
            return None
        onset = round(float(rng.uniform(gap, stay.los_hours)) * 60.0) / 60.0
        onset = min(max(onset, gap), stay.los_hours)
        label = 0
    if onset < gap:
        return None
    return OnsetAssignment(onset, label)


def build_anchor(stay_id: str, onset_time: float, task: str = Task.SEPSIS.value,
                 settings: Optional[Settings] = None) -> WindowAnchor:
    """Sepsis windows end ``gap_h`` before onset; LOS and mortality use the first 24 stay hours."""
    cfg = (settings or default_settings).cohort
    if Task(task) == Task.SEPSIS:
        end = float(onset_time) - cfg.gap_h
        return WindowAnchor(stay_id=stay_id, onset_time=float(onset_time),
                            window_start=end - WINDOW_HOURS, window_end=end)
    return WindowAnchor(stay_id=stay_id, onset_time=float(WINDOW_HOURS),
                        window_start=0.0, window_end=float(WINDOW_HOURS))


def pad_hours_for(anchor: WindowAnchor) -> int:
    """Rows lying entirely before ICU intime."""
    return int(min(max(math.floor(-anchor.window_start), 0), WINDOW_HOURS))


# ── Window extraction ─────────────────────────────────────────

def hours_since(times, intime: datetime) -> np.ndarray:
    """Real hours between ``times`` and ``intime``."""
    delta = pd.to_datetime(pd.Series(times)) - pd.Timestamp(intime)
    return (delta.dt.total_seconds() / 3600.0).to_numpy(dtype=np.float64)


def event_rows(event_hours: np.ndarray, anchor: WindowAnchor) -> Tuple[np.ndarray, np.ndarray]:
    """
    Window row for each event hour (floor of the offset from window_start) and a mask of
    events that land inside the window and inside the stay.
    """
    hours = np.asarray(event_hours, dtype=np.float64)
    rows = np.floor(hours - anchor.window_start).astype(np.int64)
    valid = (hours >= 0) & (rows >= 0) & (rows < WINDOW_HOURS) & (hours < anchor.window_end)
    return rows, valid


def extract_window(
    anchor: WindowAnchor,
    hourly_features: Mapping[int, Sequence[Optional[float]]],
    n_features: int,
    static: Optional[Sequence[float]] = None,
    label: int = 0,
    year_bucket: str = "",
) -> StayWindow:
    """
    ``hourly_features`` maps window row → feature values (None = no measurement).
    Rows before intime become zero pads; in-stay rows without data stay missing (NaN).
    """
    assert anchor.window_end >= 0, "anchor ends before ICU intime"
    pad = pad_hours_for(anchor)
    hourly = np.full((WINDOW_HOURS, n_features), np.nan)
    present = np.zeros((WINDOW_HOURS, n_features), dtype=bool)
    hourly[:pad] = 0.0
    for row, values in hourly_features.items():
        if not (pad <= row < WINDOW_HOURS):
            continue
        for j, v in enumerate(values):
            if v is not None and not (isinstance(v, float) and math.isnan(v)):
                hourly[row, j] = float(v)
                present[row, j] = True
    return StayWindow(
        stay_id=anchor.stay_id,
        hourly=hourly,
        present=present,
        static=np.asarray(static if static is not None else [], dtype=np.float64),
        pad_hours=pad,
        label=int(label),
        year_bucket=year_bucket,
    )


# ── Stage files ───────────────────────────────────────────────

STAY_COLUMNS = [
    "stay_id", "patient_id", "admission_id", "age", "year_bucket", "los_hours",
    "intime", "outtime", "gender", "ethnicity", "marital_status", "deathtime",
]
MANIFEST_COLUMNS = ["stay_id", "label", "onset_time", "year_bucket", "pad_hours"]
_TIME_FORMAT = "%Y-%m-%d %H:%M:%S"


def write_stays(stays: Iterable[CohortStay], path: Path) -> Path:
    rows = []
    for s in stays:
        rows.append({
            "stay_id": s.stay_id, "patient_id": s.patient_id, "admission_id": s.admission_id,
            "age": s.age, "year_bucket": s.year_bucket, "los_hours": s.los_hours,
            "intime": s.intime.strftime(_TIME_FORMAT), "outtime": s.outtime.strftime(_TIME_FORMAT),
            "gender": s.gender or "", "ethnicity": s.ethnicity or "",
            "marital_status": s.marital_status or "",
            "deathtime": s.deathtime.strftime(_TIME_FORMAT) if s.deathtime else "",
        })
    return write_csv(pd.DataFrame(rows, columns=STAY_COLUMNS), path)


def read_stays(path: Path) -> List[CohortStay]:
    path = Path(path)
    if not path.is_file():
        raise InputMissingError(f"stays file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in STAY_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    stays = []
    for row in df.itertuples(index=False):
        stays.append(CohortStay(
            stay_id=row.stay_id, patient_id=row.patient_id, admission_id=row.admission_id,
            age=int(row.age), year_bucket=row.year_bucket, los_hours=float(row.los_hours),
            intime=datetime.strptime(row.intime, _TIME_FORMAT),
            outtime=datetime.strptime(row.outtime, _TIME_FORMAT),
            gender=row.gender or None, ethnicity=row.ethnicity or None,
            marital_status=row.marital_status or None,
            deathtime=datetime.strptime(row.deathtime, _TIME_FORMAT) if row.deathtime else None,
        ))
    return stays


def write_manifest(rows: Iterable[ManifestRow], path: Path) -> Path:
    df = pd.DataFrame([r.model_dump() for r in rows], columns=MANIFEST_COLUMNS)
    return write_csv(df, path)


def read_manifest(path: Path) -> List[ManifestRow]:
    path = Path(path)
    if not path.is_file():
        raise InputMissingError(f"cohort manifest not found: {path}")
    df = pd.read_csv(path, dtype={"stay_id": str, "year_bucket": str})
    missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    return [
        ManifestRow(
            stay_id=r.stay_id, label=int(r.label), onset_time=float(r.onset_time),
            year_bucket=r.year_bucket, pad_hours=int(r.pad_hours),
        )
        for r in df.itertuples(index=False)
    ]
