"""
services/ingest/tables.py
Table schemas for the nine ingest tables and the adapter that maps real MIMIC-IV
extracts (hosp/ + icu/ layout, gzip, renamed columns) onto them.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from shared.exceptions import InputMissingError, SchemaError
from shared.schemas.schemas import EventSource, TableSchema

logger = logging.getLogger(__name__)


TABLE_SCHEMAS: Dict[str, TableSchema] = {
    "patients": TableSchema(
        name="patients",
        required={"subject_id": "str", "anchor_age": "int", "gender": "str", "anchor_year_group": "str"},
    ),
    "icustays": TableSchema(
        name="icustays",
        required={"stay_id": "str", "subject_id": "str", "hadm_id": "str",
                  "intime": "datetime", "outtime": "datetime"},
    ),
    "admissions": TableSchema(
        name="admissions",
        required={"hadm_id": "str", "subject_id": "str", "ethnicity": "str",
                  "marital_status": "str", "deathtime": "datetime"},
    ),
    "chartevents": TableSchema(
        name="chartevents",
        required={"stay_id": "str", "itemid": "str", "charttime": "datetime", "valuenum": "float"},
        optional={"value": "str"},
    ),
    "labevents": TableSchema(
        name="labevents",
        required={"itemid": "str", "charttime": "datetime", "valuenum": "float"},
        optional={"hadm_id": "str", "stay_id": "str"},
        any_of=("hadm_id", "stay_id"),
    ),
    "prescriptions": TableSchema(
        name="prescriptions",
        required={"hadm_id": "str", "starttime": "datetime"},
        optional={"drug": "str", "gsn": "str", "stoptime": "datetime"},
        any_of=("drug", "gsn"),
    ),
    "microbiologyevents": TableSchema(
        name="microbiologyevents",
        required={"hadm_id": "str", "spec_type_desc": "str"},
        optional={"charttime": "datetime", "chartdate": "datetime"},
        any_of=("charttime", "chartdate"),
    ),
    "procedureevents": TableSchema(
        name="procedureevents",
        required={"stay_id": "str", "itemid": "str", "starttime": "datetime"},
    ),
    "diagnoses_icd": TableSchema(
        name="diagnoses_icd",
        required={"hadm_id": "str", "icd_code": "str", "icd_version": "int"},
    ),
}

SOURCE_TABLES: Dict[str, str] = {
    EventSource.CHART.value: "chartevents",
    EventSource.LAB.value: "labevents",
    EventSource.PRESCRIPTION.value: "prescriptions",
    EventSource.MICROBIOLOGY.value: "microbiologyevents",
    EventSource.PROCEDURE.value: "procedureevents",
    EventSource.DIAGNOSIS.value: "diagnoses_icd",
}

# Real MIMIC-IV column names → workbench names.
COLUMN_RENAMES: Dict[str, Dict[str, str]] = {
    "admissions": {"race": "ethnicity"},
}

_SUBDIRS = ("", "hosp", "icu")
_SUFFIXES = (".csv", ".csv.gz")


def validate_header(table: str, columns: List[str], path: Optional[Path] = None) -> List[str]:
    """Apply renames and check required columns; returns the normalised column list."""
    schema = TABLE_SCHEMAS[table]
    renames = COLUMN_RENAMES.get(table, {})
    normalised = [renames.get(c.strip(), c.strip()) for c in columns]
    missing = [c for c in schema.required if c not in normalised]
    where = f" in {path}" if path else ""
    if missing:
        raise SchemaError(f"{table}: missing required column(s) {', '.join(missing)}{where}")
    if schema.any_of and not any(c in normalised for c in schema.any_of):
        raise SchemaError(f"{table}: needs at least one of {', '.join(schema.any_of)}{where}")
    return normalised


def read_header(table: str, path: Path) -> List[str]:
    path = Path(path)
    if not path.is_file():
        raise InputMissingError(f"{table} table not found: {path}")
    try:
        columns = list(pd.read_csv(path, nrows=0).columns)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{table}: file {path} has no header row")
    return validate_header(table, columns, path)


class MimicAdapter:
    """
    Resolves table files inside a directory. Accepts the flat layout written by the
    synthetic generator and the MIMIC-IV hosp/ + icu/ layout, plain or gzipped.
    """

    def __init__(self, root: Path, lab_join_key: str = "hadm_id"):
        self.root = Path(root)
        if lab_join_key not in ("hadm_id", "stay_id"):
            raise SchemaError(f"lab join key must be hadm_id or stay_id, got {lab_join_key!r}")
        self.lab_join_key = lab_join_key
        if not self.root.is_dir():
            raise InputMissingError(f"tables directory not found: {self.root}")

    def find(self, table: str) -> Optional[Path]:
        for sub in _SUBDIRS:
            for suffix in _SUFFIXES:
                candidate = self.root / sub / f"{table}{suffix}"
                if candidate.is_file():
                    return candidate
        return None

    def path(self, table: str) -> Path:
        found = self.find(table)
        if found is None:
            raise InputMissingError(f"{table} table not found under {self.root}")
        return found

    def has(self, table: str) -> bool:
        return self.find(table) is not None

    def source_path(self, source: str) -> Path:
        return self.path(SOURCE_TABLES[str(source)])

    def describe(self) -> Dict[str, str]:
        found = {t: str(p) for t in TABLE_SCHEMAS if (p := self.find(t)) is not None}
        return {"root": str(self.root), "lab_join_key": self.lab_join_key, **found}


def normalise_frame(table: str, df: pd.DataFrame) -> pd.DataFrame:
    """Column renames plus the MIMIC-IV value quirks (chartdate fallback, gsn lists)."""
    renames = COLUMN_RENAMES.get(table, {})
    if renames:
        df = df.rename(columns=renames)
    if table == "patients" and "anchor_year_group" in df.columns:
        # "2008 - 2010" in MIMIC-IV
        df["anchor_year_group"] = df["anchor_year_group"].str.replace(" ", "", regex=False)
    if table == "microbiologyevents":
        if "charttime" not in df.columns:
            df["charttime"] = ""
        if "chartdate" in df.columns:
            empty = df["charttime"].str.strip() == ""
            df.loc[empty, "charttime"] = df.loc[empty, "chartdate"]
    if table == "prescriptions":
        for col in ("gsn", "drug"):
            if col not in df.columns:
                df[col] = ""
        df["gsn"] = df["gsn"].str.strip().str.split(r"[\s,;]+", regex=True).str[0].fillna("")
    return df
