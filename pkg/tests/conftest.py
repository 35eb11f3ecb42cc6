"""
tests/conftest.py
Shared fixtures: a writer for small hand-built table directories, factory-boy row
factories, and a session-wide synthetic cohort for end-to-end tests.
"""

from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, List

import factory
import pandas as pd
import pytest

from config.settings import Settings
from services.ingest.tables import TABLE_SCHEMAS
from services.synth.generator import generate
from shared.schemas.schemas import SynthConfig

T0 = datetime(2010, 3, 1, 8, 0)
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"


def stamp(hours: float, start: datetime = T0) -> str:
    """Table timestamp ``hours`` after ``start``."""
    return (start + timedelta(hours=hours)).strftime(TIME_FORMAT)


# ── Row factories ──────────────────────────────────────────────────────────────

class PatientRowFactory(factory.DictFactory):
    subject_id = factory.Sequence(lambda n: str(1000 + n))
    anchor_age = factory.Faker("random_int", min=20, max=90)
    gender = factory.Faker("random_element", elements=("F", "M"))
    anchor_year_group = "2008-2010"


class AdmissionRowFactory(factory.DictFactory):
    hadm_id = factory.Sequence(lambda n: str(2000 + n))
    subject_id = "1000"
    ethnicity = factory.Faker("random_element", elements=("WHITE", "ASIAN", "OTHER"))
    marital_status = factory.Faker("random_element", elements=("MARRIED", "SINGLE"))
    deathtime = ""


class IcuStayRowFactory(factory.DictFactory):
    stay_id = factory.Sequence(lambda n: str(3000 + n))
    subject_id = "1000"
    hadm_id = "2000"
    intime = stamp(0)
    outtime = stamp(72)


# ── Table writer ───────────────────────────────────────────────────────────────

class TableWriter:
    """Collects rows per table and writes one CSV per table with every schema column."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.rows: Dict[str, List[dict]] = {t: [] for t in TABLE_SCHEMAS}

    def add(self, table: str, **row) -> "TableWriter":
        self.rows[table].append({k: str(v) for k, v in row.items()})
        return self

    def stay(self, stay_id: str, subject_id: str, hadm_id: str, *, los_h: float = 72.0,
             age: int = 60, bucket: str = "2008-2010", start: datetime = T0,
             deathtime: str = "") -> "TableWriter":
        """Patient, admission and ICU stay in one call."""
        if not any(p["subject_id"] == subject_id for p in self.rows["patients"]):
            self.add("patients", **PatientRowFactory(subject_id=subject_id, anchor_age=age, anchor_year_group=bucket))
        self.add("admissions", **AdmissionRowFactory(hadm_id=hadm_id, subject_id=subject_id, deathtime=deathtime))
        return self.add("icustays", **IcuStayRowFactory(
            stay_id=stay_id, subject_id=subject_id, hadm_id=hadm_id,
            intime=stamp(0, start), outtime=stamp(los_h, start),
        ))

    def chart(self, stay_id: str, item: str, hours: float, value="", text: str = "",
              start: datetime = T0) -> "TableWriter":
        return self.add("chartevents", stay_id=stay_id, itemid=item, charttime=stamp(hours, start),
                        valuenum=value, value=text)

    def lab(self, hadm_id: str, item: str, hours: float, value, stay_id: str = "",
            start: datetime = T0) -> "TableWriter":
        return self.add("labevents", hadm_id=hadm_id, stay_id=stay_id, itemid=item,
                        charttime=stamp(hours, start), valuenum=value)

    def antibiotic(self, hadm_id: str, hours: float, drug: str = "Vancomycin", gsn: str = "043952",
                   start: datetime = T0) -> "TableWriter":
        return self.add("prescriptions", hadm_id=hadm_id, starttime=stamp(hours, start), drug=drug, gsn=gsn)

    def culture(self, hadm_id: str, hours: float, specimen: str = "BLOOD CULTURE",
                start: datetime = T0) -> "TableWriter":
        return self.add("microbiologyevents", hadm_id=hadm_id, spec_type_desc=specimen,
                        charttime=stamp(hours, start), chartdate="")

    def diagnosis(self, hadm_id: str, code: str, version: int) -> "TableWriter":
        return self.add("diagnoses_icd", hadm_id=hadm_id, icd_code=code, icd_version=version)

    def write(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        for table, schema in TABLE_SCHEMAS.items():
            frame = pd.DataFrame(self.rows[table], columns=schema.columns).fillna("")
            frame.to_csv(self.root / f"{table}.csv", index=False)
        return self.root


@pytest.fixture
def tables(tmp_path: Path) -> TableWriter:
    return TableWriter(tmp_path / "tables")


@pytest.fixture
def settings() -> Settings:
    return Settings()


# ── Synthetic cohort ───────────────────────────────────────────────────────────

SMALL_SYNTH = SynthConfig(
    seed=7,
    n_patients=(30, 30, 30, 30),
    prevalence=(0.35, 0.35, 0.35, 0.35),
    condition_prevalence={"diabetes": 0.3, "hypertension": 0.4},
    frac_pediatric=0.05,
    frac_short_stay=0.05,
    frac_long_stay=0.05,
    frac_second_stay=0.1,
)


@pytest.fixture(scope="session")
def synth_run(tmp_path_factory):
    """Generated tables plus ground truth, shared by every test in the session."""
    out = tmp_path_factory.mktemp("synth") / "tables"
    return generate(SMALL_SYNTH, out, threads=1)


@pytest.fixture(scope="session")
def synth_tables(synth_run) -> Path:
    return synth_run.out_dir
