"""
services/drift/report.py
Drift report: builds every diagnostic series from the drift inputs and emits them as
CSV files, SVG charts and a markdown summary.

Output files:
    onset_hist_<bucket>.csv, onset_means.csv, onset_distribution.svg
    specimen_changes.csv, specimen_changes.svg
    microbiology_hour_of_day.csv, daytime_share.csv, microbiology_hour_of_day.svg
    antibiotics_trend.csv, antibiotics_trend.svg
    microbiology_stay_trend.csv, microbiology_stay_trend.svg
    summary.md
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import pandas as pd

from services.drift import charts
from services.drift.diagnostics import (
    CLOCK_BINS,
    HOUR_BINS,
    antibiotics_trend,
    hour_of_day_histogram,
    microbiology_stay_trend,
    onset_distribution,
    specimen_change_table,
)
from services.drift.inputs import DriftInputs
from shared.schemas.schemas import YEAR_BUCKETS, BucketSeries, SpecimenChangeRow
from shared.utils.files import write_csv
from shared.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

Series4 = Dict[str, BucketSeries]


@dataclass
class DriftReport:
    onset: Series4 = field(default_factory=dict)
    specimens: List[SpecimenChangeRow] = field(default_factory=list)
    hour_of_day: Series4 = field(default_factory=dict)
    antibiotics: Series4 = field(default_factory=dict)
    cultures: Series4 = field(default_factory=dict)

    @property
    def n_series(self) -> int:
        """Series with at least one count."""
        groups = (self.onset, self.hour_of_day, self.antibiotics, self.cultures)
        return sum(1 for g in groups for s in g.values() if s.total) + (1 if self.specimens else 0)

    def daytime_shares(self) -> Dict[str, Optional[float]]:
        return {b: s.daytime_share for b, s in self.hour_of_day.items()}


def build_drift_report(inputs: DriftInputs, top_n: Optional[int] = 20, threads: int = 1) -> DriftReport:
    """Each diagnostic is an independent aggregation; they run in parallel when threads allow."""
    jobs: Dict[str, Callable[[], object]] = {
        "onset": lambda: onset_distribution(inputs.labels),
        "specimens": lambda: specimen_change_table(inputs.microbiology, top_n),
        "hour_of_day": lambda: hour_of_day_histogram(inputs.microbiology),
        "antibiotics": lambda: antibiotics_trend(inputs.prescriptions, inputs.n_stays),
        "cultures": lambda: microbiology_stay_trend(inputs.stay_cultures, inputs.n_stays),
    }
    values = parallel_map(lambda fn: fn(), list(jobs.values()), threads)
    return DriftReport(**dict(zip(jobs, values)))


# ── CSV tables ────────────────────────────────────────────────

def _bucket_slug(bucket: str) -> str:
    return bucket.replace("-", "_")


def _onset_hist(series: BucketSeries) -> pd.DataFrame:
    return pd.DataFrame({
        "hour": series.bins,
        "count": series.counts,
        "normalized": series.normalized or [0.0] * len(series.bins),
    })


def onset_means_frame(onset: Series4) -> pd.DataFrame:
    return pd.DataFrame([
        {"year_bucket": b, "n_positive": s.total, "mean_onset_h": s.mean,
         "flagged": int(s.flagged), "note": s.note or ""}
        for b, s in onset.items()
    ], columns=["year_bucket", "n_positive", "mean_onset_h", "flagged", "note"])


def wide_frame(series: Series4, index_name: str, per_stay: bool = False) -> pd.DataFrame:
    """One row per bin, ``<bucket>_count`` / ``<bucket>_normalized`` (/ ``_per_stay``) columns."""
    bins = next(iter(series.values())).bins
    data: Dict[str, list] = {index_name: bins}
    for b, s in series.items():
        data[f"{b}_count"] = s.counts
        data[f"{b}_normalized"] = s.normalized or [0.0] * len(bins)
        if per_stay:
            data[f"{b}_per_stay"] = s.per_stay or [0.0] * len(bins)
    return pd.DataFrame(data)


def specimen_frame(rows: List[SpecimenChangeRow]) -> pd.DataFrame:
    """Both change columns are recomputed from the counts."""
    columns = ["specimen", *YEAR_BUCKETS, "change", "pct_change", "pct_change_fraction"]
    return pd.DataFrame([
        {"specimen": r.specimen, **dict(zip(YEAR_BUCKETS, r.counts)), "change": r.change,
         "pct_change": r.pct_label, "pct_change_fraction": r.pct_change}
        for r in rows
    ], columns=columns)


def daytime_frame(hour_of_day: Series4) -> pd.DataFrame:
    return pd.DataFrame([
        {"year_bucket": b, "n_events": s.total, "daytime_share": s.daytime_share}
        for b, s in hour_of_day.items()
    ], columns=["year_bucket", "n_events", "daytime_share"])


# ── Summary ───────────────────────────────────────────────────

def _fmt(value: Optional[float], digits: int = 2) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def summary_markdown(report: DriftReport) -> str:
    lines = ["# Drift report", ""]
    if report.n_series == 0:
        lines += ["No events in any bucket: every series is zero.", ""]
    lines += ["## Onset time", "", "| Year bucket | Positive stays | Mean onset (h) | Note |", "|---|---|---|---|"]
    for b, s in report.onset.items():
        lines.append(f"| {b} | {s.total} | {_fmt(s.mean)} | {s.note or ''} |")
    lines += ["", "## Microbiology sampling by clock hour", "",
              "| Year bucket | Events | Daytime share (09-17) |", "|---|---|---|"]
    for b, s in report.hour_of_day.items():
        lines.append(f"| {b} | {s.total} | {_fmt(s.daytime_share, 3)} |")
    lines += ["", "## Stay-relative trends", "", "| Year bucket | Antibiotic orders | Cultures |", "|---|---|---|"]
    for b in YEAR_BUCKETS:
        abx, cult = report.antibiotics.get(b), report.cultures.get(b)
        lines.append(f"| {b} | {abx.total if abx else 0} | {cult.total if cult else 0} |")
    lines += ["", "## Specimen types with greatest absolute change", ""]
    if report.specimens:
        lines += ["| Specimen | " + " | ".join(YEAR_BUCKETS) + " | Change | % Change |",
                  "|---" * (len(YEAR_BUCKETS) + 3) + "|"]
        for r in report.specimens:
            counts = " | ".join(str(c) for c in r.counts)
            lines.append(f"| {r.specimen} | {counts} | {r.change} | {r.pct_label} |")
    else:
        lines.append("No microbiology events.")
    return "\n".join(lines) + "\n"


# ── Emission ──────────────────────────────────────────────────

def _write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def _curves(series: Series4, key: str = "normalized") -> Dict[str, List[float]]:
    return {b: (getattr(s, key) or [0.0] * len(s.bins)) for b, s in series.items()}


def _complete(series: Series4, bins: List[str]) -> Series4:
    """Zero series for buckets the report does not carry."""
    zero = [0] * len(bins)
    return {b: series.get(b) or BucketSeries(bucket=b, bins=bins, counts=zero) for b in YEAR_BUCKETS}


def emit_report(report: DriftReport, out_dir: Path) -> List[Path]:
    """Writes every table and chart; identical reports give identical bytes."""
    report = DriftReport(
        onset=_complete(report.onset, HOUR_BINS),
        specimens=report.specimens,
        hour_of_day=_complete(report.hour_of_day, CLOCK_BINS),
        antibiotics=_complete(report.antibiotics, HOUR_BINS),
        cultures=_complete(report.cultures, HOUR_BINS),
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: List[Path] = []

    for b, s in report.onset.items():
        paths.append(write_csv(_onset_hist(s), out_dir / f"onset_hist_{_bucket_slug(b)}.csv"))
    paths.append(write_csv(onset_means_frame(report.onset), out_dir / "onset_means.csv"))
    paths.append(charts.line_chart(
        out_dir / "onset_distribution.svg", "Sepsis onset time by year bucket", HOUR_BINS,
        _curves(report.onset), x_label="hours into stay", y_label="share of onsets", tick_every=24,
    ))

    paths.append(write_csv(specimen_frame(report.specimens), out_dir / "specimen_changes.csv"))
    paths.append(charts.bar_chart(
        out_dir / "specimen_changes.svg", "Specimen types with greatest absolute change",
        [(r.specimen, float(r.change)) for r in report.specimens], x_label="last bucket minus first bucket",
    ))

    paths.append(write_csv(wide_frame(report.hour_of_day, "hour_of_day"), out_dir / "microbiology_hour_of_day.csv"))
    paths.append(write_csv(daytime_frame(report.hour_of_day), out_dir / "daytime_share.csv"))
    paths.append(charts.line_chart(
        out_dir / "microbiology_hour_of_day.svg", "Microbiology samples by hour of day", CLOCK_BINS,
        _curves(report.hour_of_day), x_label="hour of day", y_label="share of samples", tick_every=3,
    ))

    for name, series, title in (
        ("antibiotics_trend", report.antibiotics, "Antibiotics administered by hour into stay"),
        ("microbiology_stay_trend", report.cultures, "Microbiology samples by hour into stay"),
    ):
        paths.append(write_csv(wide_frame(series, "hour", per_stay=True), out_dir / f"{name}.csv"))
        paths.append(charts.line_chart(
            out_dir / f"{name}.svg", title, HOUR_BINS, _curves(series, "per_stay"),
            x_label="hours into stay", y_label="events per stay", tick_every=24,
        ))

    paths.append(_write_text(out_dir / "summary.md", summary_markdown(report)))
    logger.info(f"Drift report: {report.n_series} non-empty series, {len(paths)} files in {out_dir}")
    return paths
