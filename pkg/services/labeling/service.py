"""
services/labeling/service.py
Labeling stage: streams the event tables once, keeps only what labeling needs
(SOFA inputs, antibiotic orders, culture times) grouped per cohort stay, then labels every
stay for the requested task and anchors its observation window.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import Settings, settings as default_settings
from services.cohort.service import (
    CohortReport,
    assign_onset,
    build_anchor,
    pad_hours_for,
    stay_rng,
)
from services.ingest.loaders import hadm_to_stay_map
from services.ingest.streaming import IngestStats, iter_event_frames
from services.ingest.tables import MimicAdapter
from services.labeling.onset import detect_soi, label_los, label_mortality, label_sepsis3
from services.labeling.sofa import SOFA_ITEM_IDS, score_sofa_inputs, sofa_inputs_from_frame
from shared.models.models import ORGANS, SofaSeries
from shared.schemas.schemas import CohortStay, EventSource, LabelRow, ManifestRow, SepsisOnset, Task
from shared.exceptions import SchemaError
from shared.utils.files import require_file, write_csv
from shared.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ["stay_id", "onset_time", "soi_time", "sofa_delta", "label", "year_bucket"]


@dataclass
class StayEvents:
    sofa: pd.DataFrame                 # source, item_id, value, hour
    antibiotic_hours: np.ndarray
    culture_hours: np.ndarray


@dataclass
class LabelRun:
    task: str
    labels: List[LabelRow]
    manifest: List[ManifestRow]
    report: CohortReport
    ingest: Dict[str, Dict[str, int]] = field(default_factory=dict)
    unscoreable: Dict[str, int] = field(default_factory=dict)
    default_weight_hours: int = 0


# ── Event collection ──────────────────────────────────────────

def antibiotic_mask(frame: pd.DataFrame, settings: Optional[Settings] = None) -> pd.Series:
    """Vectorised counterpart of ``is_antibiotic`` over a prescription frame."""
    cfg = (settings or default_settings).antibiotics
    by_code = frame["item_id"].str.strip().isin(cfg.gsn_codes)
    if not cfg.names:
        return by_code
    text = (frame["value_text"].fillna("").astype(str) + " " + frame["item_id"].astype(str)).str.lower()
    pattern = "|".join(re.escape(n) for n in cfg.names)
    return by_code | text.str.contains(pattern, regex=True)


def _with_hours(frame: pd.DataFrame, intimes: pd.Series) -> pd.DataFrame:
    start = frame["stay_id"].map(intimes)
    frame = frame.assign(hour=(frame["charttime"] - start).dt.total_seconds() / 3600.0)
    return frame


def collect_stay_events(
    adapter: MimicAdapter,
    stays: Sequence[CohortStay],
    settings: Optional[Settings] = None,
    ingest: Optional[Dict[str, Dict[str, int]]] = None,
) -> Dict[str, StayEvents]:
    cfg = settings or default_settings
    stay_ids = {s.stay_id for s in stays}
    intimes = pd.Series({s.stay_id: pd.Timestamp(s.intime) for s in stays}, dtype="datetime64[ns]")
    hadm_to_stay = hadm_to_stay_map(stays)

    def frames(source: str) -> List[pd.DataFrame]:
        stats = IngestStats(table=source)
        out = []
        for frame in iter_event_frames(
            adapter.source_path(source), source, stay_ids,
            hadm_to_stay=hadm_to_stay, settings=cfg, stats=stats,
        ):
            out.append(frame)
        if ingest is not None:
            ingest[source] = stats.as_dict()
        return out

    sofa_parts = []
    for source in (EventSource.CHART.value, EventSource.LAB.value):
        if not adapter.has({"chart": "chartevents", "lab": "labevents"}[source]):
            logger.warning(f"No {source} table under {adapter.root}; SOFA inputs from it are absent")
            continue
        for frame in frames(source):
            keep = frame["item_id"].isin(SOFA_ITEM_IDS[source]) & frame["value"].notna()
            if keep.any():
                sofa_parts.append(frame.loc[keep].assign(source=source))

    abx_parts = []
    for frame in frames(EventSource.PRESCRIPTION.value):
        mask = antibiotic_mask(frame, cfg)
        if mask.any():
            abx_parts.append(frame.loc[mask])
    culture_parts = frames(EventSource.MICROBIOLOGY.value)

    def grouped(parts: List[pd.DataFrame]) -> Dict[str, pd.DataFrame]:
        if not parts:
            return {}
        df = _with_hours(pd.concat(parts, ignore_index=True), intimes)
        return {sid: g for sid, g in df.groupby("stay_id", sort=False)}

    sofa_by_stay = grouped(sofa_parts)
    abx_by_stay = grouped(abx_parts)
    cult_by_stay = grouped(culture_parts)
    empty_sofa = pd.DataFrame(columns=["source", "item_id", "value", "hour"])

    out: Dict[str, StayEvents] = {}
    for sid in stay_ids:
        sofa = sofa_by_stay.get(sid)
        abx = abx_by_stay.get(sid)
        cult = cult_by_stay.get(sid)
        out[sid] = StayEvents(
            sofa=sofa[["source", "item_id", "value", "hour"]] if sofa is not None else empty_sofa,
            antibiotic_hours=np.sort(abx["hour"].to_numpy()) if abx is not None else np.zeros(0),
            culture_hours=np.sort(cult["hour"].to_numpy()) if cult is not None else np.zeros(0),
        )
    return out


# ── Per-stay labeling ─────────────────────────────────────────

def label_stay_sepsis(
    stay: CohortStay,
    events: StayEvents,
    settings: Optional[Settings] = None,
) -> Tuple[Optional[SepsisOnset], SofaSeries]:
    n_hours = max(1, math.ceil(stay.los_hours))
    grid = sofa_inputs_from_frame(events.sofa, n_hours)
    sofa = score_sofa_inputs(grid, settings)
    sois = detect_soi(events.antibiotic_hours, events.culture_hours, settings)
    return label_sepsis3(sofa, sois, settings), sofa


def _label_one(stay: CohortStay, task: str, events: Optional[StayEvents], seed: int, settings: Settings):
    if task == Task.SEPSIS.value:
        onset, sofa = label_stay_sepsis(stay, events, settings)
        onsets = [onset.onset_time] if onset else []
        row = LabelRow(
            stay_id=stay.stay_id,
            label=int(onset is not None),
            onset_time=onset.onset_time if onset else None,
            soi_time=onset.soi.soi_time if onset else None,
            sofa_delta=onset.sofa_delta if onset else None,
        )
        assignment = assign_onset(stay, onsets, stay_rng(seed, stay.stay_id), settings)
        return row, assignment, sofa
    label = label_los(stay, settings) if task == Task.LOS.value else label_mortality(stay)
    row = LabelRow(stay_id=stay.stay_id, label=label)
    return row, (float(settings.cohort.window_h), label), None


def label_cohort(
    adapter: MimicAdapter,
    stays: Sequence[CohortStay],
    task: str = Task.SEPSIS.value,
    seed: int = 0,
    settings: Optional[Settings] = None,
) -> LabelRun:
    """Label every cohort stay for ``task`` and build the cohort manifest."""
    cfg = settings or default_settings
    task = Task(task).value
    ingest: Dict[str, Dict[str, int]] = {}
    events = collect_stay_events(adapter, stays, cfg, ingest) if task == Task.SEPSIS.value else {}

    ordered = sorted(stays, key=lambda s: s.stay_id)
    results = parallel_map(
        lambda s: _label_one(s, task, events.get(s.stay_id), seed, cfg),
        ordered,
        cfg.runtime.threads,
    )

    report = CohortReport(total_stays=len(ordered))
    labels: List[LabelRow] = []
    manifest: List[ManifestRow] = []
    unscoreable = np.zeros(len(ORGANS), dtype=np.int64)
    default_weight_hours = 0
    for stay, (row, assignment, sofa) in zip(ordered, results):
        labels.append(row)
        if sofa is not None:
            unscoreable += np.asarray(sofa.unscoreable, dtype=np.int64)
            default_weight_hours += sofa.default_weight_hours
        if assignment is None:
            report.onset_rejected += 1
            continue
        onset_time, label = assignment
        anchor = build_anchor(stay.stay_id, onset_time, task, cfg)
        manifest.append(ManifestRow(
            stay_id=stay.stay_id,
            label=int(label),
            onset_time=float(onset_time),
            year_bucket=stay.year_bucket,
            pad_hours=pad_hours_for(anchor),
        ))
    report.kept = len(manifest)

    if report.onset_rejected:
        logger.warning(f"Labeling: {report.onset_rejected} stays rejected for onset before the gap")
    if default_weight_hours:
        logger.warning(f"Labeling: default weight {cfg.sofa.default_weight_kg} kg used for {default_weight_hours} pressor hours")
    if task == Task.SEPSIS.value:
        logger.info(f"Labeling: unscoreable organ-hours {dict(zip(ORGANS, unscoreable.tolist()))}")
    n_pos = sum(r.label for r in labels)
    logger.info(f"Labeling ({task}): {len(labels)} stays, {n_pos} positive, {len(manifest)} in manifest")

    return LabelRun(
        task=task,
        labels=labels,
        manifest=manifest,
        report=report,
        ingest=ingest,
        unscoreable=dict(zip(ORGANS, unscoreable.tolist())),
        default_weight_hours=default_weight_hours,
    )


# ── Stage files ───────────────────────────────────────────────

def write_labels(labels: Sequence[LabelRow], stays: Sequence[CohortStay], path: Path) -> Path:
    buckets = {s.stay_id: s.year_bucket for s in stays}
    df = pd.DataFrame(
        [{**r.model_dump(), "year_bucket": buckets.get(r.stay_id, "")} for r in labels],
        columns=LABEL_COLUMNS,
    )
    df["sofa_delta"] = df["sofa_delta"].astype("Int64")
    return write_csv(df, path, float_format="%.4f")


def read_labels(path: Path) -> pd.DataFrame:
    df = pd.read_csv(require_file(path, "labels file"), dtype={"stay_id": str, "year_bucket": str})
    missing = [c for c in LABEL_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    return df
