"""
services/features/store.py
Feature-store stage: streams the event tables once per source, aggregates every cohort
window, imputes, and writes the hourly tensor to the binary container with a static sidecar
CSV. Static encoding is deferred to training time so vocabularies freeze on the train split.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from config.settings import Settings, settings as default_settings
from services.cohort.service import build_anchor
from services.features.hourly import aggregate_frame, finish_aggregation, impute_simple
from services.features.specs import featureset_label
from services.features.static import StaticEncoder, raw_static_row, static_rows_from_frame, static_values_from_stay
from services.ingest.loaders import hadm_to_stay_map
from services.ingest.registry import build_item_registry
from services.ingest.streaming import IngestStats, iter_event_frames
from services.ingest.tables import SOURCE_TABLES, MimicAdapter
from shared.exceptions import DimensionMismatchError, InputMissingError, SchemaError
from shared.models.models import WINDOW_HOURS, ModelDataset
from shared.schemas.schemas import CohortStay, EventSource, FeatureSetSpec, ManifestRow, Task
from shared.utils.container import read_container, write_container
from shared.utils.files import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

STORE_FILE = "features.bin"
STATIC_FILE = "static.csv"
SPEC_FILE = "featureset.json"
_ID_COLUMNS = ["stay_id", "patient_id", "year_bucket", "label", "onset_time", "pad_hours"]


@dataclass
class FeatureStore:
    spec: FeatureSetSpec
    hourly: np.ndarray                 # N × 24 × 3F, imputed, not standardised
    static: pd.DataFrame               # id columns + raw static values + ICD flags
    task: str = Task.SEPSIS.value
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.hourly.shape[0] != len(self.static):
            raise DimensionMismatchError("hourly tensor and static table disagree on stays")

    @property
    def stay_ids(self) -> List[str]:
        return self.static["stay_id"].astype(str).tolist()

    @property
    def hourly_channels(self) -> List[str]:
        names = self.spec.hourly_names
        return names + [f"{n}:missing" for n in names] + [f"{n}:hours_since" for n in names]

    def to_dataset(self, encoder: StaticEncoder) -> ModelDataset:
        rows = static_rows_from_frame(self.static, self.spec)
        return ModelDataset(
            hourly=self.hourly,
            static=encoder.transform(rows) if rows else np.zeros((0, encoder.dim)),
            labels=self.static["label"].to_numpy(dtype=np.int64),
            stay_ids=tuple(self.stay_ids),
            buckets=tuple(self.static["year_bucket"].astype(str)),
            patient_ids=tuple(self.static["patient_id"].astype(str)),
            hourly_channels=tuple(self.hourly_channels),
            static_channels=tuple(encoder.channel_names),
            meta={"featureset": self.spec.name, "task": self.task},
        )

    def fit_encoder(self, stay_ids: Optional[Sequence[str]] = None) -> StaticEncoder:
        frame = self.static if stay_ids is None else self.static[self.static["stay_id"].isin(set(stay_ids))]
        return StaticEncoder(self.spec).fit(static_rows_from_frame(frame, self.spec))


# ── Extraction ────────────────────────────────────────────────

def _sources(spec: FeatureSetSpec) -> List[str]:
    order = [s.value for s in EventSource]
    used = {str(f.source) for f in spec.hourly_features}
    return [s for s in order if s in used]


def extract_feature_store(
    adapter: MimicAdapter,
    stays: Sequence[CohortStay],
    manifest: Sequence[ManifestRow],
    spec: FeatureSetSpec,
    task: str = Task.SEPSIS.value,
    settings: Optional[Settings] = None,
) -> FeatureStore:
    cfg = settings or default_settings
    by_id = {s.stay_id: s for s in stays}
    rows = [m for m in manifest if m.stay_id in by_id]
    if len(rows) < len(manifest):
        logger.warning(f"Features: {len(manifest) - len(rows)} manifest stays missing from the stays file")
    rows.sort(key=lambda m: m.stay_id)
    cohort = [by_id[m.stay_id] for m in rows]
    stay_ids = [m.stay_id for m in rows]
    position = {sid: i for i, sid in enumerate(stay_ids)}

    anchors = {m.stay_id: build_anchor(m.stay_id, m.onset_time, task, cfg) for m in rows}
    window_start = pd.Series({sid: a.window_start for sid, a in anchors.items()}, dtype=np.float64)
    intimes = pd.Series({s.stay_id: pd.Timestamp(s.intime) for s in cohort}, dtype="datetime64[ns]")
    hadm_to_stay = hadm_to_stay_map(cohort)

    registry = build_item_registry(spec)
    names = spec.hourly_names
    feature_index = {n: j for j, n in enumerate(names)}
    rules = [str(f.aggregation) for f in spec.hourly_features]
    ingest: Dict[str, Dict[str, int]] = {}

    partials = []
    for source in _sources(spec):
        table = SOURCE_TABLES[source]
        if not adapter.has(table):
            logger.warning(f"Features: no {table} table under {adapter.root}; its features stay missing")
            continue
        source_registry = {
            item: m for item, m in registry.items()
            if any(item in f.item_ids and str(f.source) == source for f in spec.hourly_features)
        }
        stats = IngestStats(table=table)
        for frame in iter_event_frames(
            adapter.path(table), source, set(stay_ids),
            hadm_to_stay=hadm_to_stay, settings=cfg, stats=stats,
        ):
            part = aggregate_frame(frame, source_registry, feature_index, window_start, intimes)
            if len(part):
                partials.append(part)
        ingest[source] = stats.as_dict()

    n, f = len(stay_ids), len(names)
    sums = np.zeros((n, WINDOW_HOURS, f))
    counts = np.zeros((n, WINDOW_HOURS, f))
    if partials:
        total = pd.concat(partials, ignore_index=True).groupby(["stay_id", "row", "feature"], sort=False).sum()
        idx = total.index
        i = np.array([position[s] for s in idx.get_level_values("stay_id")], dtype=np.int64)
        r = idx.get_level_values("row").to_numpy(dtype=np.int64)
        j = idx.get_level_values("feature").to_numpy(dtype=np.int64)
        sums[i, r, j] = total["sum"].to_numpy()
        counts[i, r, j] = total["count"].to_numpy()

    hourly = np.zeros((n, WINDOW_HOURS, 3 * f))
    for k, m in enumerate(rows):
        matrix = finish_aggregation(sums[k], counts[k], rules, names)
        hourly[k] = impute_simple(matrix, m.pad_hours)

    diagnoses = _collect_diagnoses(adapter, spec, set(stay_ids), hadm_to_stay, cfg, ingest)
    static_rows = []
    for m, stay in zip(rows, cohort):
        raw = raw_static_row(static_values_from_stay(stay), diagnoses.get(m.stay_id, []), spec)
        static_rows.append({
            "stay_id": m.stay_id, "patient_id": stay.patient_id, "year_bucket": m.year_bucket,
            "label": m.label, "onset_time": m.onset_time, "pad_hours": m.pad_hours, **raw,
        })
    columns = _ID_COLUMNS + [s.name for s in spec.static_features] + [i.column for i in spec.icd_features]
    static = pd.DataFrame(static_rows, columns=columns)

    logger.info(f"Features ({featureset_label(spec)}): {n} stays × {f} hourly features, {len(spec.icd_features)} ICD flags")
    return FeatureStore(spec=spec, hourly=hourly, static=static, task=task, meta={"ingest": ingest})


def _collect_diagnoses(
    adapter: MimicAdapter,
    spec: FeatureSetSpec,
    stay_ids: Set[str],
    hadm_to_stay: Dict[str, str],
    cfg: Settings,
    ingest: Dict[str, Dict[str, int]],
) -> Dict[str, List[Tuple[str, int]]]:
    out: Dict[str, List[Tuple[str, int]]] = {}
    if not spec.icd_features:
        return out
    if not adapter.has("diagnoses_icd"):
        logger.warning(f"Features: no diagnoses_icd table under {adapter.root}; ICD flags stay 0")
        return out
    stats = IngestStats(table="diagnoses_icd")
    for frame in iter_event_frames(
        adapter.path("diagnoses_icd"), EventSource.DIAGNOSIS.value, stay_ids,
        hadm_to_stay=hadm_to_stay, settings=cfg, stats=stats,
    ):
        for sid, code, version in zip(frame["stay_id"], frame["item_id"], frame["icd_version"]):
            out.setdefault(sid, []).append((code, int(version)))
    ingest[EventSource.DIAGNOSIS.value] = stats.as_dict()
    return out


# ── Files ─────────────────────────────────────────────────────

def write_feature_store(store: FeatureStore, out_dir: Path) -> List[Path]:
    out_dir = Path(out_dir)
    meta = {
        "featureset": store.spec.name,
        "task": store.task,
        "n_stays": int(store.hourly.shape[0]),
        "n_hours": WINDOW_HOURS,
        "n_features": store.spec.n_hourly,
        "hourly_channels": store.hourly_channels,
        "stay_ids": store.stay_ids,
    }
    paths = [
        write_container(out_dir / STORE_FILE, meta, {"hourly": store.hourly}),
        write_csv(store.static, out_dir / STATIC_FILE),
        write_json(out_dir / SPEC_FILE, store.spec.model_dump(mode="json")),
    ]
    return paths


def read_feature_store(in_dir: Path) -> FeatureStore:
    in_dir = Path(in_dir)
    if not (in_dir / STORE_FILE).is_file():
        raise InputMissingError(f"no feature store in {in_dir}")
    meta, arrays = read_container(in_dir / STORE_FILE)
    spec = FeatureSetSpec.model_validate(read_json(in_dir / SPEC_FILE))
    static = pd.read_csv(in_dir / STATIC_FILE, dtype={"stay_id": str, "patient_id": str, "year_bucket": str},
                         keep_default_na=True)
    if static["stay_id"].tolist() != list(meta["stay_ids"]):
        raise SchemaError(f"{in_dir}: static sidecar rows do not match the feature container")
    return FeatureStore(spec=spec, hourly=arrays["hourly"], static=static, task=meta.get("task", Task.SEPSIS.value))
