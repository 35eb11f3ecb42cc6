"""
services/drift/inputs.py
Loads the event frames the drift diagnostics read: every microbiology event tagged with
its patient's year bucket, plus antibiotic orders and cultures of labeled stays with
hours since ICU intime.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import pandas as pd

from config.settings import Settings, settings as default_settings
from services.ingest.loaders import hadm_to_stay_map, load_admissions, load_icustays, load_patients
from services.ingest.streaming import IngestStats, iter_event_frames
from services.ingest.tables import MimicAdapter
from services.labeling.service import antibiotic_mask
from shared.schemas.schemas import EventSource

logger = logging.getLogger(__name__)

_MICRO = EventSource.MICROBIOLOGY.value
_RX = EventSource.PRESCRIPTION.value


@dataclass
class DriftInputs:
    labels: pd.DataFrame
    microbiology: pd.DataFrame               # year_bucket, specimen, charttime
    prescriptions: pd.DataFrame              # stay_id, year_bucket, hour
    stay_cultures: pd.DataFrame              # stay_id, year_bucket, hour
    n_stays: Dict[str, int] = field(default_factory=dict)
    ingest: Dict[str, Dict[str, int]] = field(default_factory=dict)


def _concat(parts: List[pd.DataFrame], columns: List[str]) -> pd.DataFrame:
    if not parts:
        return pd.DataFrame(columns=columns)
    return pd.concat(parts, ignore_index=True)[columns]


def admission_buckets(adapter: MimicAdapter) -> Dict[str, str]:
    """hadm_id → anchor year bucket of the admitting patient."""
    buckets = {p.patient_id: p.anchor_year_group for p in load_patients(adapter.path("patients"))}
    return {
        a.admission_id: buckets[a.patient_id]
        for a in load_admissions(adapter.path("admissions"))
        if a.patient_id in buckets
    }


def _all_microbiology(adapter: MimicAdapter, hadm_buckets: Mapping[str, str],
                      cfg: Settings, stats: IngestStats) -> pd.DataFrame:
    identity = {h: h for h in hadm_buckets}
    parts = []
    for frame in iter_event_frames(adapter.source_path(_MICRO), _MICRO,
                                   hadm_to_stay=identity, settings=cfg, stats=stats):
        parts.append(pd.DataFrame({
            "year_bucket": frame["stay_id"].map(hadm_buckets),
            "specimen": frame["item_id"],
            "charttime": frame["charttime"],
        }))
    return _concat(parts, ["year_bucket", "specimen", "charttime"])


def _stay_relative(adapter: MimicAdapter, source: str, hadm_to_stay: Mapping[str, str],
                   intimes: pd.Series, buckets: pd.Series, cfg: Settings,
                   stats: IngestStats) -> pd.DataFrame:
    parts = []
    for frame in iter_event_frames(adapter.source_path(source), source, set(intimes.index),
                                   hadm_to_stay=hadm_to_stay, settings=cfg, stats=stats):
        if source == _RX:
            frame = frame.loc[antibiotic_mask(frame, cfg)]
        if not len(frame):
            continue
        start = frame["stay_id"].map(intimes)
        parts.append(pd.DataFrame({
            "stay_id": frame["stay_id"],
            "year_bucket": frame["stay_id"].map(buckets),
            "hour": (frame["charttime"] - start).dt.total_seconds() / 3600.0,
        }))
    return _concat(parts, ["stay_id", "year_bucket", "hour"])


def load_drift_inputs(labels: pd.DataFrame, tables_dir: Path,
                      settings: Optional[Settings] = None) -> DriftInputs:
    """``labels`` is a labels file frame (stay_id, year_bucket, label, onset_time)."""
    cfg = settings or default_settings
    adapter = MimicAdapter(tables_dir, cfg.ingest.lab_join_key)
    labels = labels.astype({"stay_id": str, "year_bucket": str})
    buckets = labels.set_index("stay_id")["year_bucket"]

    icu = [s for s in load_icustays(adapter.path("icustays")) if s.stay_id in buckets.index]
    missing = len(buckets) - len(icu)
    if missing:
        logger.warning(f"Drift: {missing} labeled stays have no icustays row; their events are skipped")
    intimes = pd.Series({s.stay_id: pd.Timestamp(s.intime) for s in icu}, dtype="datetime64[ns]")
    hadm_to_stay = hadm_to_stay_map(icu)

    stats = {src: IngestStats(table=src) for src in ("microbiology_all", _RX, _MICRO)}
    microbiology = _all_microbiology(adapter, admission_buckets(adapter), cfg, stats["microbiology_all"])
    prescriptions = _stay_relative(adapter, _RX, hadm_to_stay, intimes, buckets, cfg, stats[_RX])
    cultures = _stay_relative(adapter, _MICRO, hadm_to_stay, intimes, buckets, cfg, stats[_MICRO])

    n_stays = labels.loc[labels["stay_id"].isin(intimes.index), "year_bucket"].value_counts().to_dict()
    logger.info(
        f"Drift inputs: {len(microbiology)} microbiology events, {len(prescriptions)} antibiotic orders "
        f"and {len(cultures)} cultures over {len(intimes)} stays"
    )
    return DriftInputs(
        labels=labels,
        microbiology=microbiology,
        prescriptions=prescriptions,
        stay_cultures=cultures,
        n_stays={str(k): int(v) for k, v in n_stays.items()},
        ingest={k: v.as_dict() for k, v in stats.items()},
    )
