"""
services/drift/diagnostics.py
Per-bucket descriptive series: onset-time histograms, clock-hour sampling histograms,
stay-relative antibiotic and culture trends, and the specimen change table.
Every function returns a series for each of the four buckets, zero-filled when empty.
"""

from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from shared.schemas.schemas import YEAR_BUCKETS, BucketSeries, SpecimenChangeRow

STAY_HOURS = 240
DAYTIME = (9, 17)          # clock hours [9, 17)
HOUR_BINS = [str(h) for h in range(STAY_HOURS)]
CLOCK_BINS = [f"{h:02d}" for h in range(24)]


def _normalized(counts: np.ndarray) -> Optional[List[float]]:
    total = counts.sum()
    if total == 0:
        return None
    norm = counts / total
    # absorb rounding so the series sums to 1 within validation tolerance
    norm[np.argmax(norm)] += 1.0 - norm.sum()
    return norm.tolist()


def _series(bucket: str, bins: List[str], counts: np.ndarray, **extra) -> BucketSeries:
    counts = counts.astype(np.int64)
    return BucketSeries(bucket=bucket, bins=bins, counts=counts.tolist(), normalized=_normalized(counts), **extra)


def _stay_hour_counts(hours: np.ndarray) -> np.ndarray:
    idx = np.clip(np.floor(hours), 0, STAY_HOURS - 1).astype(np.int64)
    return np.bincount(idx, minlength=STAY_HOURS)


# ── Onset times ───────────────────────────────────────────────

def onset_distribution(labels: pd.DataFrame) -> Dict[str, BucketSeries]:
    """
    Histogram (1 h bins over [0, 240)) of labeled onset hours of positive stays, with the
    mean onset. A bucket without positives gets a zero series flagged with a note.
    """
    positives = labels[(labels["label"] == 1) & labels["onset_time"].notna()]
    out: Dict[str, BucketSeries] = {}
    for bucket in YEAR_BUCKETS:
        onsets = positives.loc[positives["year_bucket"] == bucket, "onset_time"].to_numpy(dtype=np.float64)
        if not onsets.size:
            out[bucket] = _series(bucket, HOUR_BINS, np.zeros(STAY_HOURS), flagged=True,
                                  note="no positive stays in bucket")
            continue
        out[bucket] = _series(bucket, HOUR_BINS, _stay_hour_counts(onsets), mean=float(onsets.mean()))
    return out


# ── Clock-hour sampling ───────────────────────────────────────

def hour_of_day_histogram(events: pd.DataFrame) -> Dict[str, BucketSeries]:
    """``events`` carries year_bucket and a wall-clock charttime."""
    out: Dict[str, BucketSeries] = {}
    for bucket in YEAR_BUCKETS:
        times = events.loc[events["year_bucket"] == bucket, "charttime"]
        counts = np.bincount(pd.DatetimeIndex(times).hour.to_numpy(), minlength=24) if len(times) else np.zeros(24)
        series = _series(bucket, CLOCK_BINS, counts)
        out[bucket] = series.model_copy(update={"daytime_share": daytime_share(series)})
    return out


def daytime_share(series: BucketSeries) -> float:
    """Share of clock-hour counts falling in [09:00, 17:00); 0 for an empty series."""
    total = series.total
    if total == 0:
        return 0.0
    lo, hi = DAYTIME
    return float(sum(series.counts[lo:hi]) / total)


# ── Stay-relative trends ──────────────────────────────────────

def _stay_trend(events: pd.DataFrame, n_stays: Optional[Mapping[str, int]]) -> Dict[str, BucketSeries]:
    inside = events[(events["hour"] >= 0) & (events["hour"] < STAY_HOURS)]
    out: Dict[str, BucketSeries] = {}
    for bucket in YEAR_BUCKETS:
        hours = inside.loc[inside["year_bucket"] == bucket, "hour"].to_numpy(dtype=np.float64)
        counts = _stay_hour_counts(hours) if hours.size else np.zeros(STAY_HOURS)
        stays = (n_stays or {}).get(bucket, 0)
        per_stay = (counts / stays).tolist() if stays else None
        out[bucket] = _series(bucket, HOUR_BINS, counts, per_stay=per_stay)
    return out


def antibiotics_trend(prescriptions: pd.DataFrame, n_stays: Optional[Mapping[str, int]] = None) -> Dict[str, BucketSeries]:
    """Antibiotic orders per hour into stay; ``prescriptions`` carries year_bucket and hour."""
    return _stay_trend(prescriptions, n_stays)


def microbiology_stay_trend(events: pd.DataFrame, n_stays: Mapping[str, int]) -> Dict[str, BucketSeries]:
    """Cultures per hour into stay, normalised per event and per stay."""
    return _stay_trend(events, n_stays)


# ── Specimen change table ─────────────────────────────────────

def specimen_counts(events: pd.DataFrame) -> Dict[str, Tuple[int, int, int, int]]:
    """``events`` carries year_bucket and specimen."""
    if not len(events):
        return {}
    table = pd.crosstab(events["specimen"], events["year_bucket"]).reindex(columns=list(YEAR_BUCKETS), fill_value=0)
    return {str(spec): tuple(int(c) for c in row) for spec, row in zip(table.index, table.to_numpy())}


def specimen_change_rows(counts: Mapping[str, Sequence[int]], top_n: Optional[int] = 20) -> List[SpecimenChangeRow]:
    rows = [SpecimenChangeRow.from_counts(spec, tuple(int(c) for c in c4)) for spec, c4 in counts.items()]
    rows.sort(key=lambda r: (-abs(r.change), r.specimen))
    return rows if top_n is None else rows[:top_n]


def specimen_change_table(events: pd.DataFrame, top_n: Optional[int] = 20) -> List[SpecimenChangeRow]:
    """Rows sorted by |last − first| descending, ties by specimen name."""
    return specimen_change_rows(specimen_counts(events), top_n)


def bucket_counts(values: Iterable[str]) -> Dict[str, int]:
    series = pd.Series(list(values), dtype=object)
    return {b: int((series == b).sum()) for b in YEAR_BUCKETS}
