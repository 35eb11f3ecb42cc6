"""
services/ingest/streaming.py
Chunked event ingestion. ``iter_event_frames`` is the vectorised path (normalised pandas
frames); ``stream_events`` wraps it into EventRecord objects. Memory is bounded by
``ingest.chunk_rows`` regardless of file size.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, Mapping, Optional, Set

import numpy as np
import pandas as pd

from config.settings import Settings, settings as default_settings
from services.ingest.tables import SOURCE_TABLES, normalise_frame, read_header
from shared.exceptions import IngestIOError, SchemaError
from shared.schemas.schemas import EventRecord, EventSource

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ["stay_id", "item_id", "value", "value_text", "charttime", "icd_version"]

# Sources whose rows are keyed by admission and mapped onto a stay.
_HADM_KEYED = {EventSource.PRESCRIPTION.value, EventSource.MICROBIOLOGY.value, EventSource.DIAGNOSIS.value}
_READ_ERRORS = (pd.errors.ParserError, OSError, UnicodeDecodeError, EOFError, ValueError)


@dataclass
class IngestStats:
    table: str = ""
    total: int = 0
    yielded: int = 0
    filtered: int = 0
    non_numeric: int = 0
    missing_value: int = 0
    malformed: int = 0

    @property
    def skipped(self) -> int:
        return self.filtered + self.non_numeric + self.missing_value + self.malformed

    def reset(self) -> None:
        self.total = self.yielded = self.filtered = 0
        self.non_numeric = self.missing_value = self.malformed = 0

    def as_dict(self) -> Dict[str, int]:
        out = asdict(self)
        out["skipped"] = self.skipped
        return out

    def log_summary(self) -> None:
        dropped = self.non_numeric + self.missing_value + self.malformed
        msg = (
            f"{self.table}: {self.total} rows, {self.yielded} kept, {self.filtered} outside cohort, "
            f"{self.non_numeric} non-numeric, {self.missing_value} missing value, {self.malformed} malformed"
        )
        if dropped:
            logger.warning(msg)
        else:
            logger.info(msg)


# ── Chunk normalisation ───────────────────────────────────────

def _parse_times(col: pd.Series) -> pd.Series:
    return pd.to_datetime(col.str.strip(), format="ISO8601", errors="coerce")


def _parse_numbers(col: pd.Series):
    stripped = col.str.strip()
    empty = stripped == ""
    values = pd.to_numeric(stripped.where(~empty), errors="coerce").astype(np.float64)
    bad = ~empty & ~np.isfinite(values.to_numpy())
    return values, bad, empty


def _text(df: pd.DataFrame, column: str) -> pd.Series:
    if column in df.columns:
        return df[column].str.strip()
    return pd.Series("", index=df.index, dtype=object)


def _normalise_chunk(
    source: str,
    df: pd.DataFrame,
    stats: IngestStats,
    stay_filter: Optional[Set[str]],
    hadm_to_stay: Optional[Mapping[str, str]],
    lab_join_key: str,
) -> pd.DataFrame:
    stats.total += len(df)
    index = df.index
    nothing = pd.Series(False, index=index)

    hadm_keyed = source in _HADM_KEYED or (source == EventSource.LAB.value and lab_join_key == "hadm_id")
    if hadm_keyed:
        if hadm_to_stay is None:
            raise ValueError(f"{source} events need an admission-to-stay map")
        key = _text(df, "hadm_id")
        stay = key.map(hadm_to_stay)
        unmapped = stay.isna() & (key != "")
        malformed = key == ""
        stay = stay.fillna("").astype(str)
    else:
        stay = _text(df, "stay_id")
        unmapped = nothing
        malformed = stay == ""

    value = pd.Series(np.nan, index=index)
    value_text = pd.Series(None, index=index, dtype=object)
    icd_version = pd.Series(np.nan, index=index)
    bad_number = nothing
    missing = nothing

    if source in (EventSource.CHART.value, EventSource.LAB.value):
        item = _text(df, "itemid")
        charttime = _parse_times(df["charttime"])
        value, bad_number, empty = _parse_numbers(df["valuenum"])
        if source == EventSource.CHART.value:
            text = _text(df, "value")
            text_obs = empty & (text != "")
            value_text = text.where(text_obs, None)
            missing = empty & ~text_obs
        else:
            missing = empty
    elif source == EventSource.PRESCRIPTION.value:
        gsn = _text(df, "gsn")
        drug = _text(df, "drug")
        item = gsn.where(gsn != "", drug)
        value_text = drug.where(drug != "", None)
        charttime = _parse_times(df["starttime"])
    elif source == EventSource.MICROBIOLOGY.value:
        item = _text(df, "spec_type_desc")
        charttime = _parse_times(df["charttime"])
    elif source == EventSource.PROCEDURE.value:
        item = _text(df, "itemid")
        charttime = _parse_times(df["starttime"])
    elif source == EventSource.DIAGNOSIS.value:
        item = _text(df, "icd_code")
        charttime = pd.Series(pd.NaT, index=index, dtype="datetime64[ns]")
        icd_version = pd.to_numeric(_text(df, "icd_version"), errors="coerce")
        malformed = malformed | ~icd_version.isin([9, 10])
    else:
        raise SchemaError(f"unknown event source {source!r}")

    malformed = malformed | (item == "")
    if source != EventSource.DIAGNOSIS.value:
        malformed = malformed | charttime.isna()

    keep = ~malformed
    filtered = keep & unmapped
    if stay_filter is not None:
        filtered = filtered | (keep & ~stay.isin(stay_filter))
    keep &= ~filtered
    non_numeric = keep & bad_number
    keep &= ~non_numeric
    missing_value = keep & missing
    keep &= ~missing_value

    stats.malformed += int(malformed.sum())
    stats.filtered += int(filtered.sum())
    stats.non_numeric += int(non_numeric.sum())
    stats.missing_value += int(missing_value.sum())
    stats.yielded += int(keep.sum())

    frame = pd.DataFrame({
        "stay_id": stay,
        "item_id": item,
        "value": value,
        "value_text": value_text,
        "charttime": charttime,
        "icd_version": icd_version,
    })
    return frame.loc[keep, EVENT_COLUMNS]


# ── Public API ────────────────────────────────────────────────

def _check_columns(source: str, columns, cfg: Settings) -> None:
    if source == EventSource.LAB.value and cfg.ingest.lab_join_key not in columns:
        raise SchemaError(f"labevents: join key '{cfg.ingest.lab_join_key}' is not a column")


def iter_event_frames(
    path: Path,
    source: str,
    stay_filter: Optional[Iterable[str]] = None,
    *,
    hadm_to_stay: Optional[Mapping[str, str]] = None,
    settings: Optional[Settings] = None,
    stats: Optional[IngestStats] = None,
) -> Iterator[pd.DataFrame]:
    """
    Yield normalised event frames chunk by chunk, in file order. A read failure raises
    IngestIOError whose ``row`` is the first data row of the failing chunk.
    """
    cfg = settings or default_settings
    source = EventSource(source).value
    table = SOURCE_TABLES[source]
    path = Path(path)
    _check_columns(source, read_header(table, path), cfg)
    stats = stats if stats is not None else IngestStats(table=table)
    stay_set = set(stay_filter) if stay_filter is not None else None
    offset = 0
    reader = pd.read_csv(
        path, dtype=str, keep_default_na=False, na_filter=False, chunksize=cfg.ingest.chunk_rows,
    )
    with reader:
        while True:
            try:
                chunk = next(reader)
            except StopIteration:
                break
            except _READ_ERRORS as exc:
                raise IngestIOError(f"{table}: read failed in {path}: {exc}", row=offset + 1) from exc
            chunk = normalise_frame(table, chunk)
            frame = _normalise_chunk(source, chunk, stats, stay_set, hadm_to_stay, cfg.ingest.lab_join_key)
            offset += len(chunk)
            if len(frame):
                yield frame
    stats.log_summary()


def _records(frame: pd.DataFrame, source: str) -> Iterator[EventRecord]:
    for stay_id, item_id, value, value_text, charttime, icd_version in frame.itertuples(index=False, name=None):
        yield EventRecord.model_construct(
            stay_id=stay_id,
            source=source,
            item_id=item_id,
            value=None if value != value else float(value),
            value_text=value_text if isinstance(value_text, str) else None,
            charttime=None if pd.isna(charttime) else charttime.to_pydatetime(),
            icd_version=None if icd_version != icd_version else int(icd_version),
        )


class EventStream:
    """
    Single-consumer iterator of EventRecords with its IngestStats.
    The header is checked on construction, so schema mismatches surface before iteration.
    """

    def __init__(
        self,
        path: Path,
        source: str,
        stay_filter: Optional[Iterable[str]] = None,
        *,
        hadm_to_stay: Optional[Mapping[str, str]] = None,
        settings: Optional[Settings] = None,
    ):
        self.path = Path(path)
        self.source = EventSource(source).value
        self.table = SOURCE_TABLES[self.source]
        self.stay_filter = set(stay_filter) if stay_filter is not None else None
        self.hadm_to_stay = hadm_to_stay
        self.settings = settings or default_settings
        self.stats = IngestStats(table=self.table)
        _check_columns(self.source, read_header(self.table, self.path), self.settings)

    def frames(self) -> Iterator[pd.DataFrame]:
        self.stats.reset()
        return iter_event_frames(
            self.path, self.source, self.stay_filter,
            hadm_to_stay=self.hadm_to_stay, settings=self.settings, stats=self.stats,
        )

    def __iter__(self) -> Iterator[EventRecord]:
        for frame in self.frames():
            yield from _records(frame, self.source)


def stream_events(
    path: Path,
    source: str,
    stay_filter: Optional[Iterable[str]] = None,
    *,
    hadm_to_stay: Optional[Mapping[str, str]] = None,
    settings: Optional[Settings] = None,
) -> EventStream:
    return EventStream(path, source, stay_filter, hadm_to_stay=hadm_to_stay, settings=settings)
