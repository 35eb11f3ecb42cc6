"""
services/features/hourly.py
Hourly aggregation inside the observation window, simple imputation
(forward fill + missing flag + hours since last observation) and flattening.
"""

from datetime import datetime
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from services.cohort.service import event_rows, hours_since, pad_hours_for
from services.ingest.registry import ItemMapping
from shared.exceptions import DimensionMismatchError
from shared.models.models import WINDOW_HOURS, HourlyMatrix, ModelInput
from shared.schemas.schemas import Aggregation, EventRecord, WindowAnchor


def feature_order(registry: Dict[str, ItemMapping]) -> List[str]:
    """High-level feature names in first-appearance order."""
    seen: Dict[str, None] = {}
    for mapping in registry.values():
        seen.setdefault(mapping.feature, None)
    return list(seen)


def aggregate_hourly(
    events: Iterable[EventRecord],
    registry: Dict[str, ItemMapping],
    anchor: WindowAnchor,
    intime: datetime,
    feature_names: Optional[Sequence[str]] = None,
) -> HourlyMatrix:
    """
    Mean-rule features average the in-hour values; sum-rule features add them, counting an
    event without a numeric value as 1. Unmapped items and events outside the window are ignored.
    """
    names = list(feature_names) if feature_names is not None else feature_order(registry)
    index = {n: j for j, n in enumerate(names)}
    records = [e for e in events if e.item_id in registry and e.charttime is not None]
    sums = np.zeros((WINDOW_HOURS, len(names)))
    counts = np.zeros((WINDOW_HOURS, len(names)))
    if records:
        rows, valid = event_rows(hours_since([e.charttime for e in records], intime), anchor)
        for e, row, ok in zip(records, rows, valid):
            if not ok:
                continue
            mapping = registry[e.item_id]
            j = index[mapping.feature]
            if mapping.aggregation == Aggregation.SUM.value:
                sums[row, j] += e.value if e.value is not None else 1.0
                counts[row, j] += 1
            elif e.value is not None:
                sums[row, j] += e.value
                counts[row, j] += 1
    return finish_aggregation(sums, counts, [registry_rule(registry, n) for n in names], names)


def registry_rule(registry: Dict[str, ItemMapping], feature: str) -> str:
    for mapping in registry.values():
        if mapping.feature == feature:
            return mapping.aggregation
    return Aggregation.MEAN.value


def finish_aggregation(sums: np.ndarray, counts: np.ndarray, rules: Sequence[str],
                       names: Sequence[str] = ()) -> HourlyMatrix:
    present = counts > 0
    is_mean = np.array([r == Aggregation.MEAN.value for r in rules], dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(is_mean[None, :], sums / counts, sums)
    values = np.where(present, values, np.nan)
    return HourlyMatrix(values=values, present=present, feature_names=tuple(names))


def impute_simple(matrix: HourlyMatrix, pad_hours: int = 0) -> np.ndarray:
    """
    24 × 3F block [values | flags | Δt]. Present hours keep their value (flag 1, Δt 0);
    absent hours carry the last value forward (flag 0, Δt = hours since it); hours with no
    earlier value get 0 and Δt counted from the first in-stay row. Pad rows are all zero
    and never seed the fill.
    """
    values = matrix.values
    present = matrix.present
    n_hours, n_feat = values.shape
    out = np.zeros((n_hours, 3 * n_feat))
    last_val = np.zeros(n_feat)
    last_hour = np.zeros(n_feat)
    seen = np.zeros(n_feat, dtype=bool)
    for h in range(pad_hours, n_hours):
        p = present[h]
        out[h, :n_feat] = np.where(p, np.nan_to_num(values[h]), np.where(seen, last_val, 0.0))
        out[h, n_feat:2 * n_feat] = p
        out[h, 2 * n_feat:] = np.where(p, 0.0, np.where(seen, h - last_hour, h - pad_hours + 1))
        last_val = np.where(p, np.nan_to_num(values[h]), last_val)
        last_hour = np.where(p, h, last_hour)
        seen |= p
    return out


def flatten(model_input: ModelInput) -> np.ndarray:
    """Row-major by hour then channel, static vector appended last."""
    return np.concatenate([model_input.hourly.reshape(-1), model_input.static])


def unflatten(vector: np.ndarray, n_features: int, n_static: int, label: int = 0) -> ModelInput:
    vector = np.asarray(vector, dtype=np.float64)
    width = 3 * n_features
    expected = WINDOW_HOURS * width + n_static
    if vector.shape != (expected,):
        raise DimensionMismatchError(f"flat vector has shape {vector.shape}, expected ({expected},)")
    hourly = vector[:WINDOW_HOURS * width].reshape(WINDOW_HOURS, width)
    return ModelInput(hourly=hourly, static=vector[WINDOW_HOURS * width:], label=label)


def flatten_batch(hourly: np.ndarray, static: np.ndarray) -> np.ndarray:
    """N × T × 3F and N × S → N × (T·3F + S), same layout as ``flatten``."""
    n = hourly.shape[0]
    return np.concatenate([hourly.reshape(n, -1), static.reshape(n, -1)], axis=1)


def build_model_input(
    events: Iterable[EventRecord],
    registry: Dict[str, ItemMapping],
    anchor: WindowAnchor,
    intime: datetime,
    static: Sequence[float],
    label: int = 0,
    feature_names: Optional[Sequence[str]] = None,
) -> ModelInput:
    """Per-stay path: aggregate, impute and pair with the static vector."""
    matrix = aggregate_hourly(events, registry, anchor, intime, feature_names)
    return ModelInput(hourly=impute_simple(matrix, pad_hours_for(anchor)), static=np.asarray(static), label=label)


def aggregate_frame(
    frame: pd.DataFrame,
    registry: Dict[str, ItemMapping],
    feature_index: Dict[str, int],
    window_start: pd.Series,
    intimes: pd.Series,
) -> pd.DataFrame:
    """
    Streaming path over a normalised event frame from many stays. Returns partial sums and
    counts per (stay_id, row, feature); partials from several chunks add up.
    """
    frame = frame[frame["item_id"].isin(registry.keys())]
    if not len(frame):
        return pd.DataFrame(columns=["stay_id", "row", "feature", "sum", "count"])
    hours = (frame["charttime"] - frame["stay_id"].map(intimes)).dt.total_seconds().to_numpy() / 3600.0
    start = frame["stay_id"].map(window_start).to_numpy(dtype=np.float64)
    end = start + WINDOW_HOURS
    rows = np.floor(hours - start)
    valid = (hours >= 0) & (rows >= 0) & (rows < WINDOW_HOURS) & (hours < end)

    mappings = [registry[i] for i in frame["item_id"]]
    feature = np.array([feature_index[m.feature] for m in mappings], dtype=np.int64)
    is_sum = np.array([m.aggregation == Aggregation.SUM.value for m in mappings], dtype=bool)
    value = frame["value"].to_numpy(dtype=np.float64)
    has_value = ~np.isnan(value)
    contrib = np.where(is_sum & ~has_value, 1.0, value)
    keep = valid & (is_sum | has_value)

    part = pd.DataFrame({
        "stay_id": frame["stay_id"].to_numpy()[keep],
        "row": rows[keep].astype(np.int64),
        "feature": feature[keep],
        "sum": contrib[keep],
        "count": np.ones(int(keep.sum())),
    })
    return part.groupby(["stay_id", "row", "feature"], as_index=False, sort=False)[["sum", "count"]].sum()
