"""
services/labeling/sofa.py
Hourly SOFA scoring. ``sofa_inputs_from_events`` builds the per-hour worst-value grid of
SOFA inputs, ``score_sofa_inputs`` forward-fills it within the stay and applies the organ
thresholds. Hours without data for an organ score 0 and are counted.
"""

import logging
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import Settings, settings as default_settings
from shared.models.models import ORGANS, SofaSeries
from shared.schemas.schemas import EventRecord, EventSource

logger = logging.getLogger(__name__)

_CHART = EventSource.CHART.value
_LAB = EventSource.LAB.value

# input → ((source, item_id), ...)
SOFA_ITEMS: Dict[str, Tuple[Tuple[str, str], ...]] = {
    "pao2": ((_LAB, "50821"),),
    "fio2": ((_CHART, "223835"), (_LAB, "50816")),
    "platelets": ((_LAB, "51265"), (_CHART, "227457")),
    "bilirubin": ((_LAB, "50885"), (_CHART, "225690")),
    "map": ((_CHART, "220052"), (_CHART, "220181"), (_CHART, "225312")),
    "norepinephrine": ((_CHART, "221906"),),
    "epinephrine": ((_CHART, "221289"),),
    "dopamine": ((_CHART, "221662"),),
    "dobutamine": ((_CHART, "221653"),),
    "gcs_eye": ((_CHART, "220739"),),
    "gcs_verbal": ((_CHART, "223900"),),
    "gcs_motor": ((_CHART, "223901"),),
    "gcs_total": ((_CHART, "198"),),
    "creatinine": ((_LAB, "50912"), (_CHART, "220615")),
    "urine": ((_CHART, "226559"),),
    "weight": ((_CHART, "226512"), (_CHART, "224639")),
}

# how several readings inside one hour collapse into the hour's worst value
_WORST = {
    "pao2": "min", "fio2": "max", "platelets": "min", "bilirubin": "max", "map": "min",
    "norepinephrine": "max", "epinephrine": "max", "dopamine": "max", "dobutamine": "max",
    "gcs_eye": "min", "gcs_verbal": "min", "gcs_motor": "min", "gcs_total": "min",
    "creatinine": "max", "urine": "sum", "weight": "mean",
}

SOFA_INPUTS: Tuple[str, ...] = tuple(SOFA_ITEMS)
INPUT_BY_ITEM: Dict[Tuple[str, str], str] = {
    key: name for name, keys in SOFA_ITEMS.items() for key in keys
}
SOFA_ITEM_IDS: Dict[str, frozenset] = {
    source: frozenset(item for (src, item) in INPUT_BY_ITEM if src == source)
    for source in (_CHART, _LAB)
}


# ── Input grid ────────────────────────────────────────────────

def sofa_inputs_from_frame(frame: pd.DataFrame, n_hours: int) -> pd.DataFrame:
    """
    ``frame`` has columns source, item_id, value, hour (real hours since intime).
    Returns an n_hours × inputs grid of per-hour worst values (NaN where absent).
    """
    grid = pd.DataFrame(np.nan, index=pd.RangeIndex(n_hours, name="hour"), columns=list(SOFA_INPUTS))
    if frame is None or not len(frame) or n_hours <= 0:
        return grid
    keys = list(zip(frame["source"].astype(str), frame["item_id"].astype(str)))
    names = pd.Series([INPUT_BY_ITEM.get(k) for k in keys], index=frame.index)
    hours = np.floor(frame["hour"].to_numpy(dtype=np.float64))
    mask = names.notna().to_numpy() & (hours >= 0) & (hours < n_hours) & frame["value"].notna().to_numpy()
    if not mask.any():
        return grid
    sub = pd.DataFrame({
        "name": names[mask].to_numpy(),
        "hour": hours[mask].astype(np.int64),
        "value": frame["value"].to_numpy(dtype=np.float64)[mask],
    })
    for name, group in sub.groupby("name", sort=True):
        agg = group.groupby("hour")["value"].agg(_WORST[name])
        grid.loc[agg.index, name] = agg.to_numpy()
    return grid


def sofa_inputs_from_events(events: Iterable[EventRecord], intime, n_hours: int) -> pd.DataFrame:
    rows = [
        (e.source, e.item_id, e.value, e.charttime)
        for e in events
        if e.value is not None and e.charttime is not None
    ]
    frame = pd.DataFrame(rows, columns=["source", "item_id", "value", "charttime"])
    if len(frame):
        frame["hour"] = (pd.to_datetime(frame["charttime"]) - pd.Timestamp(intime)).dt.total_seconds() / 3600.0
    else:
        frame["hour"] = pd.Series(dtype=np.float64)
    return sofa_inputs_from_frame(frame, n_hours)


# ── Organ thresholds ──────────────────────────────────────────

def _select(conditions, choices) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.select(conditions, choices, default=0).astype(np.int64)


def respiration_score(pao2: np.ndarray, fio2: np.ndarray) -> np.ndarray:
    fio2 = np.where(fio2 > 1.0, fio2 / 100.0, fio2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(fio2 > 0, pao2 / fio2, np.nan)
    return _select([ratio < 100, ratio < 200, ratio < 300, ratio < 400], [4, 3, 2, 1])


def coagulation_score(platelets: np.ndarray) -> np.ndarray:
    p = platelets
    return _select([p < 20, p < 50, p < 100, p < 150], [4, 3, 2, 1])


def liver_score(bilirubin: np.ndarray) -> np.ndarray:
    b = bilirubin
    return _select([b >= 12, b >= 6, b >= 2, b >= 1.2], [4, 3, 2, 1])


def cardiovascular_score(
    map_: np.ndarray,
    dopamine: np.ndarray,
    dobutamine: np.ndarray,
    epinephrine: np.ndarray,
    norepinephrine: np.ndarray,
) -> np.ndarray:
    """Pressor doses in µg/kg/min."""
    dop = np.nan_to_num(dopamine, nan=0.0)
    dob = np.nan_to_num(dobutamine, nan=0.0)
    epi = np.nan_to_num(epinephrine, nan=0.0)
    nor = np.nan_to_num(norepinephrine, nan=0.0)
    return _select(
        [
            (dop > 15) | (epi > 0.1) | (nor > 0.1),
            (dop > 5) | (epi > 0) | (nor > 0),
            (dop > 0) | (dob > 0),
            map_ < 70,
        ],
        [4, 3, 2, 1],
    )


def cns_score(gcs: np.ndarray) -> np.ndarray:
    g = gcs
    return _select([g < 6, g < 10, g < 13, g < 15], [4, 3, 2, 1])


def renal_score(creatinine: np.ndarray, urine_24h: np.ndarray) -> np.ndarray:
    c = creatinine
    by_creatinine = _select([c >= 5, c >= 3.5, c >= 2, c >= 1.2], [4, 3, 2, 1])
    u = urine_24h
    by_urine = _select([u < 200, u < 500], [4, 3])
    return np.maximum(by_creatinine, by_urine)


# ── Scoring ───────────────────────────────────────────────────

def score_sofa_inputs(grid: pd.DataFrame, settings: Optional[Settings] = None) -> SofaSeries:
    """Forward-fill inputs within the stay (urine excluded) and score every hour."""
    cfg = (settings or default_settings).sofa
    n = len(grid)
    if n == 0:
        return SofaSeries(subscores=np.zeros((0, len(ORGANS)), dtype=np.int64))

    urine = grid["urine"].to_numpy(dtype=np.float64)
    filled = grid.drop(columns=["urine"]).ffill()
    col = {name: filled[name].to_numpy(dtype=np.float64) for name in filled.columns}

    # trailing 24h urine total, scored only once a full day has elapsed and some output was charted
    urine_seen = pd.Series(~np.isnan(urine)).rolling(24, min_periods=24).sum().to_numpy()
    urine_sum = pd.Series(np.nan_to_num(urine, nan=0.0)).rolling(24, min_periods=24).sum().to_numpy()
    urine_24h = np.where(urine_seen > 0, urine_sum, np.nan)

    weight = col["weight"]
    pressors = ("norepinephrine", "epinephrine", "dopamine", "dobutamine")
    any_pressor = np.zeros(n, dtype=bool)
    for name in pressors:
        any_pressor |= ~np.isnan(col[name])
    default_weight = any_pressor & (np.isnan(weight) | (weight <= 0))
    kg = np.where(default_weight, cfg.default_weight_kg, weight)
    doses = {name: col[name] / kg for name in pressors}

    gcs_sum = col["gcs_eye"] + col["gcs_verbal"] + col["gcs_motor"]
    gcs = np.where(np.isnan(col["gcs_total"]), gcs_sum, col["gcs_total"])

    subscores = np.column_stack([
        respiration_score(col["pao2"], col["fio2"]),
        coagulation_score(col["platelets"]),
        liver_score(col["bilirubin"]),
        cardiovascular_score(col["map"], doses["dopamine"], doses["dobutamine"],
                             doses["epinephrine"], doses["norepinephrine"]),
        cns_score(gcs),
        renal_score(col["creatinine"], urine_24h),
    ])

    ratio_missing = np.isnan(col["pao2"]) | np.isnan(col["fio2"])
    cardio_missing = np.isnan(col["map"]) & ~any_pressor
    renal_missing = np.isnan(col["creatinine"]) & np.isnan(urine_24h)
    unscoreable = (
        int(ratio_missing.sum()),
        int(np.isnan(col["platelets"]).sum()),
        int(np.isnan(col["bilirubin"]).sum()),
        int(cardio_missing.sum()),
        int(np.isnan(gcs).sum()),
        int(renal_missing.sum()),
    )
    return SofaSeries(
        subscores=subscores,
        unscoreable=unscoreable,
        default_weight_hours=int(default_weight.sum()),
    )


def compute_hourly_sofa(
    events: Iterable[EventRecord],
    intime,
    n_hours: int,
    settings: Optional[Settings] = None,
) -> SofaSeries:
    """Hour-bucket a stay's events and score them."""
    return score_sofa_inputs(sofa_inputs_from_events(events, intime, n_hours), settings)


def reference_totals(sofa: SofaSeries, settings: Optional[Settings] = None) -> np.ndarray:
    """
    Comparison value per hour: the hour-0 total (``first_hour``), or the minimum total over
    the trailing ``window_pre_h`` hours (``rolling_min``, non-canonical).
    """
    cfg = (settings or default_settings).sofa
    totals = sofa.totals
    if cfg.baseline == "rolling_min":
        span = int(cfg.window_pre_h) + 1
        return pd.Series(totals).rolling(span, min_periods=1).min().to_numpy(dtype=np.int64)
    return np.full(len(totals), sofa.baseline, dtype=np.int64)
