"""
services/features/static.py
Static vector: real-valued demographics, one-hot categoricals over a vocabulary frozen on
the training split, and one binary flag per (condition, ICD version) row of the feature set.
"""

import json
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from shared.schemas.schemas import (
    AdmissionRecord,
    CohortStay,
    FeatureSetSpec,
    IcdFeature,
    PatientRecord,
    StaticEncoding,
)


def _norm_code(code: str) -> str:
    return str(code).replace(".", "").strip().upper()


def icd_flags(diagnoses: Iterable[Tuple[str, int]], icd_features: Sequence[IcdFeature]) -> np.ndarray:
    """A flag is set when any listed code prefixes a diagnosis of the same ICD version."""
    codes_by_version: Dict[int, List[str]] = {9: [], 10: []}
    for code, version in diagnoses:
        codes_by_version.setdefault(int(version), []).append(_norm_code(code))
    flags = np.zeros(len(icd_features))
    for j, feature in enumerate(icd_features):
        prefixes = [_norm_code(c) for c in feature.codes]
        for code in codes_by_version.get(feature.icd_version, []):
            if any(code.startswith(p) for p in prefixes):
                flags[j] = 1.0
                break
    return flags


def static_values_from_records(patient: PatientRecord, admission: Optional[AdmissionRecord]) -> Dict[str, object]:
    return {
        "patients.anchor_age": patient.anchor_age,
        "patients.gender": patient.gender,
        "admissions.ethnicity": admission.ethnicity if admission else None,
        "admissions.marital_status": admission.marital_status if admission else None,
    }


def static_values_from_stay(stay: CohortStay) -> Dict[str, object]:
    return {
        "patients.anchor_age": stay.age,
        "patients.gender": stay.gender,
        "admissions.ethnicity": stay.ethnicity,
        "admissions.marital_status": stay.marital_status,
    }


class StaticEncoder:
    """
    Encodes raw static values (one mapping per stay, keyed by feature name) into vectors.
    ``fit`` freezes the one-hot vocabularies; unseen categories encode as all zeros.
    """

    def __init__(self, spec: FeatureSetSpec, vocab: Optional[Dict[str, List[str]]] = None):
        self.spec = spec
        self.vocab: Dict[str, List[str]] = vocab or {}

    def fit(self, rows: Iterable[Mapping[str, object]]) -> "StaticEncoder":
        rows = list(rows)
        self.vocab = {}
        for feature in self.spec.static_features:
            if feature.encoding == StaticEncoding.ONE_HOT.value:
                values = {str(r.get(feature.name)) for r in rows if _is_category(r.get(feature.name))}
                self.vocab[feature.name] = sorted(values)
        return self

    @property
    def channel_names(self) -> List[str]:
        names: List[str] = []
        for feature in self.spec.static_features:
            if feature.encoding == StaticEncoding.REAL.value:
                names.append(feature.name)
            else:
                names.extend(f"{feature.name}={v}" for v in self.vocab.get(feature.name, []))
        names.extend(f.column for f in self.spec.icd_features)
        return names

    @property
    def continuous_mask(self) -> np.ndarray:
        mask: List[bool] = []
        for feature in self.spec.static_features:
            if feature.encoding == StaticEncoding.REAL.value:
                mask.append(True)
            else:
                mask.extend(False for _ in self.vocab.get(feature.name, []))
        mask.extend(False for _ in self.spec.icd_features)
        return np.array(mask, dtype=bool)

    @property
    def dim(self) -> int:
        return len(self.channel_names)

    def transform_one(self, row: Mapping[str, object]) -> np.ndarray:
        parts: List[float] = []
        for feature in self.spec.static_features:
            value = row.get(feature.name)
            if feature.encoding == StaticEncoding.REAL.value:
                parts.append(float(value) if _is_number(value) else 0.0)
            else:
                vocab = self.vocab.get(feature.name, [])
                parts.extend(1.0 if _is_category(value) and str(value) == v else 0.0 for v in vocab)
        for feature in self.spec.icd_features:
            parts.append(float(row.get(feature.column) or 0.0))
        return np.asarray(parts, dtype=np.float64)

    def transform(self, rows: Iterable[Mapping[str, object]]) -> np.ndarray:
        encoded = [self.transform_one(r) for r in rows]
        if not encoded:
            return np.zeros((0, self.dim))
        return np.vstack(encoded)

    def to_json(self) -> str:
        return json.dumps({"featureset": self.spec.name, "vocab": self.vocab}, sort_keys=True)

    @classmethod
    def from_json(cls, spec: FeatureSetSpec, payload: str) -> "StaticEncoder":
        data = json.loads(payload)
        return cls(spec, vocab={k: list(v) for k, v in data["vocab"].items()})

    def save(self, path: Path) -> Path:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
        return Path(path)


def _is_category(value: object) -> bool:
    if value is None:
        return False
    if isinstance(value, float) and np.isnan(value):
        return False
    return str(value).strip() != ""


def _is_number(value: object) -> bool:
    try:
        return value is not None and np.isfinite(float(value))
    except (TypeError, ValueError):
        return False


def raw_static_row(
    values: Mapping[str, object],
    diagnoses: Iterable[Tuple[str, int]],
    spec: FeatureSetSpec,
) -> Dict[str, object]:
    """Raw per-stay static row keyed by feature name (and ICD column), before encoding."""
    row: Dict[str, object] = {}
    for feature in spec.static_features:
        row[feature.name] = values.get(f"{feature.source}.{feature.column}")
    flags = icd_flags(diagnoses, spec.icd_features)
    for feature, flag in zip(spec.icd_features, flags):
        row[feature.column] = float(flag)
    return row


def build_static(
    patient: PatientRecord,
    admission: Optional[AdmissionRecord],
    diagnoses: Iterable[Tuple[str, int]],
    spec: FeatureSetSpec,
    encoder: Optional[StaticEncoder] = None,
) -> np.ndarray:
    """
    Static vector for one stay. Without an encoder the vocabulary is this stay's own values,
    so every present category encodes as 1.
    """
    row = raw_static_row(static_values_from_records(patient, admission), diagnoses, spec)
    encoder = encoder or StaticEncoder(spec).fit([row])
    return encoder.transform_one(row)


def static_rows_from_frame(frame: pd.DataFrame, spec: FeatureSetSpec) -> List[Dict[str, object]]:
    columns = [f.name for f in spec.static_features] + [f.column for f in spec.icd_features]
    present = [c for c in columns if c in frame.columns]
    categorical = {f.name for f in spec.static_features if f.encoding == StaticEncoding.ONE_HOT.value}
    rows = []
    for record in frame[present].to_dict(orient="records"):
        rows.append({k: (None if k in categorical and not _is_category(v) else v) for k, v in record.items()})
    return rows
