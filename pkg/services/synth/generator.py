"""
services/synth/generator.py
Synthetic MIMIC-shaped tables with ground-truth drift injections.

Every patient draws from its own stream ``default_rng([seed, patient_index])``, so a
configuration fully determines the bytes written. Sepsis-positive stays carry the event
pattern the labeler recovers: a culture workup (blood culture plus labs showing a platelet
drop) followed half an hour later by an antibiotic order. During daytime the workup is
performed with the bucket's daytime culture rate; a skipped workup is deferred to 17:00.
"""

import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.special import expit, logit

from config.settings import APP_VERSION, read_toml
from services.ingest.tables import TABLE_SCHEMAS
from shared.exceptions import SynthConfigError
from shared.schemas.schemas import YEAR_BUCKETS, GroundTruthRow, SynthConfig, VitalDynamics
from shared.utils.files import config_hash, write_csv, write_json
from shared.utils.parallel import parallel_map

logger = logging.getLogger(__name__)

GROUND_TRUTH_CSV = "ground_truth.csv"
GROUND_TRUTH_JSON = "ground_truth.json"
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
DAYTIME = (9, 17)

# ── Catalogues ────────────────────────────────────────────────

DEFAULT_VITALS: Dict[str, VitalDynamics] = {
    "heart rate": VitalDynamics(item_id="220045", baseline=85.0, sepsis_shift=25.0, noise=4.0),
    "systolic blood pressure": VitalDynamics(item_id="220050", baseline=120.0, sepsis_shift=-25.0, noise=5.0),
    "diastolic blood pressure": VitalDynamics(item_id="220051", baseline=65.0, sepsis_shift=-12.0, noise=3.0),
    "temperature": VitalDynamics(item_id="223762", baseline=36.9, sepsis_shift=1.4, noise=0.15, decimals=2),
    "respiratory rate": VitalDynamics(item_id="220210", baseline=17.0, sepsis_shift=8.0, noise=1.5),
    "oxygen saturation": VitalDynamics(item_id="220277", baseline=97.0, sepsis_shift=-4.0, noise=0.8),
}

# Labs outside the SOFA inputs; these ramp with deterioration like the vitals.
SIGNAL_LABS: Dict[str, VitalDynamics] = {
    "lymphocytes": VitalDynamics(item_id="51244", baseline=22.0, sepsis_shift=-10.0, noise=3.0),
    "base excess": VitalDynamics(item_id="50802", baseline=0.0, sepsis_shift=-5.0, noise=1.0),
    "band neutrophils": VitalDynamics(item_id="51144", baseline=2.0, sepsis_shift=8.0, noise=1.0),
}

# SOFA lab inputs: (item, baseline, noise, score-0 bound) where the bound keeps the organ at 0.
PLATELETS = ("51265", 250.0, 35.0, 151.0)
CREATININE = ("50912", 0.8, 0.1, 1.19)
BILIRUBIN = ("50885", 0.5, 0.1, 1.19)
PLATELETS_SEPTIC = (45.0, 8.0, 25.0, 95.0)      # mean, noise, low, high: coagulation score >= 2

# condition → (ICD-9 code, ICD-10 code)
CONDITION_CODES: Dict[str, Tuple[str, str]] = {
    "diabetes": ("25000", "E119"),
    "hypertension": ("4019", "I10"),
    "hiv": ("042", "B20"),
    "obesity": ("27800", "E669"),
    "coronary artery disease": ("41400", "I2510"),
    "congestive heart failure": ("4280", "I5022"),
    "copd": ("496", "J449"),
    "chronic kidney disease": ("40390", "I129"),
    "chronic liver disease": ("5719", "K760"),
}
FILLER_CODES = {9: ("V5867", "2724", "53081"), 10: ("Z794", "E785", "K219")}

# Culture counts per bucket for the most-changed specimen types, used as sampling weights.
DEFAULT_SPECIMEN_MIX: Dict[str, Tuple[float, float, float, float]] = {
    "BLOOD CULTURE": (171630, 158924, 163711, 144620),
    "URINE": (221335, 211626, 263363, 234576),
    "SWAB": (92304, 79169, 68363, 39677),
    "SPUTUM": (52437, 39027, 40078, 32135),
    "STOOL": (47316, 38649, 38166, 28502),
    "MRSA SCREEN": (39086, 34375, 14766, 5657),
    "SEROLOGY/BLOOD": (35713, 35489, 32866, 16187),
    "TISSUE": (21455, 26311, 32957, 28481),
    "ABSCESS": (9597, 11657, 12734, 13796),
    "BRONCHIAL WASHINGS": (2214, 2577, 5087, 6442),
    "Blood (LYME)": (0, 4, 2414, 3815),
}
WORKUP_SPECIMEN = "BLOOD CULTURE"

ANTIBIOTICS = (
    ("043952", "Vancomycin"), ("008880", "Penicillin G Potassium"), ("", "CefePIME"),
    ("", "Piperacillin-Tazobactam"), ("", "CeftriaXONE"), ("", "Levofloxacin"),
)
OTHER_DRUGS = (("", "Heparin"), ("", "Insulin"), ("", "Acetaminophen"), ("", "Furosemide"), ("", "Pantoprazole"))
OTHER_DRUG_RATE_PER_DAY = 1.0

ETHNICITIES = ("WHITE", "BLACK/AFRICAN AMERICAN", "HISPANIC/LATINO", "ASIAN", "OTHER", "UNKNOWN")
ETHNICITY_P = (0.62, 0.14, 0.07, 0.05, 0.07, 0.05)
MARITAL = ("MARRIED", "SINGLE", "WIDOWED", "DIVORCED", "")
MARITAL_P = (0.45, 0.3, 0.12, 0.08, 0.05)

CENTRAL_LINE, DRAIN, FEEDING_TUBE = "225315", "225447", "224007"

SUBJECT_BASE, HADM_BASE, STAY_BASE = 10_000_000, 20_000_000, 30_000_000
SECOND_OFFSET = 5_000_000


# ── Config ────────────────────────────────────────────────────

def _validated(config: SynthConfig, **update) -> SynthConfig:
    try:
        return SynthConfig.model_validate({**config.model_dump(), **update})
    except ValidationError as exc:
        raise SynthConfigError(f"invalid generator config: {exc.errors()[0]['msg']}") from exc


def check_conditions(config: SynthConfig) -> None:
    unknown = sorted(set(config.condition_prevalence) - set(CONDITION_CODES))
    if unknown:
        raise SynthConfigError(f"unknown condition(s) {', '.join(unknown)}; known: {', '.join(CONDITION_CODES)}")


def load_synth_config(path: Path) -> SynthConfig:
    """Generator config from TOML; an empty file gives the defaults."""
    raw = read_toml(Path(path))
    try:
        config = SynthConfig(**raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise SynthConfigError(f"{path}: {key}: {err['msg']}") from exc
    check_conditions(config)
    return config


def _bucket_index(bucket) -> int:
    if isinstance(bucket, int):
        if not 0 <= bucket < len(YEAR_BUCKETS):
            raise SynthConfigError(f"bucket index {bucket} out of range 0-{len(YEAR_BUCKETS) - 1}")
        return bucket
    if str(bucket) not in YEAR_BUCKETS:
        raise SynthConfigError(f"unknown year bucket {bucket!r}")
    return YEAR_BUCKETS.index(str(bucket))


def inject_microbio_shift(config: SynthConfig, bucket, daytime_multiplier: float) -> SynthConfig:
    """Scale one bucket's daytime (09-17) culture rate. Rates above 1 saturate at always-sample."""
    if daytime_multiplier < 0:
        raise SynthConfigError(f"daytime multiplier must be >= 0, got {daytime_multiplier}")
    i = _bucket_index(bucket)
    rates = list(config.microbio_daytime_rate)
    rates[i] = rates[i] * daytime_multiplier
    return _validated(config, microbio_daytime_rate=tuple(rates))


def bucket_years(bucket: str) -> Tuple[int, int]:
    first, last = bucket.split("-")
    return int(first), int(last)


def inject_icd_cutover(config: SynthConfig, bucket_boundary: int) -> SynthConfig:
    """
    Move the ICD-9 → ICD-10 switch to the start of bucket ``bucket_boundary`` (0-4).
    0 codes everything in ICD-10, 4 codes everything in ICD-9.
    """
    if not isinstance(bucket_boundary, int) or not 0 <= bucket_boundary <= len(YEAR_BUCKETS):
        raise SynthConfigError(f"ICD cutover boundary must be an integer 0-{len(YEAR_BUCKETS)}, got {bucket_boundary!r}")
    if bucket_boundary == len(YEAR_BUCKETS):
        cutover = date(bucket_years(YEAR_BUCKETS[-1])[1] + 1, 1, 1)
    else:
        cutover = date(bucket_years(YEAR_BUCKETS[bucket_boundary])[0], 1, 1)
    return _validated(config, icd_cutover=cutover)


# ── Per-patient simulation ────────────────────────────────────

@dataclass
class _Unit:
    index: int
    bucket: int


@dataclass
class _StayPlan:
    stay_id: str
    hadm_id: str
    intime: datetime
    los_min: int
    label: int = 0
    deterioration_min: Optional[int] = None
    workup_min: Optional[int] = None
    eligible: bool = True
    dies: bool = False


@dataclass
class PatientTables:
    rows: Dict[str, List[tuple]] = field(default_factory=lambda: {t: [] for t in TABLE_SCHEMAS})
    frames: Dict[str, List[pd.DataFrame]] = field(default_factory=dict)
    truth: List[GroundTruthRow] = field(default_factory=list)

    def frame(self, table: str, df: pd.DataFrame) -> None:
        if len(df):
            self.frames.setdefault(table, []).append(df)


def _clock_minute(intime: datetime, offset_min: int) -> int:
    t = intime + timedelta(minutes=int(offset_min))
    return t.hour * 60 + t.minute


def _is_daytime(intime: datetime, offset_min: int) -> bool:
    lo, hi = DAYTIME
    return lo * 60 <= _clock_minute(intime, offset_min) < hi * 60


def _defer_to_evening(intime: datetime, offset_min: int) -> int:
    return offset_min + DAYTIME[1] * 60 - _clock_minute(intime, offset_min)


def _stamp(intime: datetime, minutes) -> pd.Series:
    offsets = pd.to_timedelta(np.asarray(minutes, dtype=np.int64), unit="m")
    return pd.Series(pd.Timestamp(intime) + offsets).dt.strftime(TIME_FORMAT)


class _Simulator:
    def __init__(self, config: SynthConfig):
        self.config = config
        self.vitals = config.vitals or DEFAULT_VITALS
        mix = config.specimen_mix or DEFAULT_SPECIMEN_MIX
        self.specimens = sorted(mix)
        weights = np.array([mix[s] for s in self.specimens], dtype=np.float64)
        totals = weights.sum(axis=0)
        self.specimen_p = np.divide(weights, totals, out=np.full_like(weights, 1.0 / len(self.specimens)),
                                    where=totals > 0)
        self.conditions = sorted(config.condition_prevalence)
        self.expected_flags = sum(config.condition_prevalence.values())
        self.cutover = datetime.combine(config.icd_cutover, datetime.min.time())

    # ── calendar and stays ────────────────────────────────

    def _intime(self, rng: np.random.Generator, bucket: int) -> datetime:
        first, last = bucket_years(YEAR_BUCKETS[bucket])
        start = datetime(first, 1, 1)
        span_min = (datetime(last + 1, 1, 1) - start).days * 1440 - 60 * 1440
        return start + timedelta(minutes=int(rng.integers(0, span_min)))

    def _los_minutes(self, rng: np.random.Generator) -> int:
        c = self.config
        hours = float(np.clip(rng.lognormal(math.log(c.los_median_h), c.los_sigma), 26.0, 238.0))
        return int(round(hours * 60))

    def _septic_probability(self, bucket: int, flags: Sequence[int]) -> float:
        base = logit(self.config.prevalence[bucket])
        shift = math.log(self.config.condition_odds_ratio) * (sum(flags) - self.expected_flags)
        return float(expit(base + shift))

    def _plan_sepsis(self, rng: np.random.Generator, plan: _StayPlan, bucket: int) -> None:
        c = self.config
        hour = int(np.clip(np.rint(rng.normal(c.onset_mean[bucket], c.onset_spread[bucket])), 2, 96))
        deterioration = hour * 60 + int(rng.integers(0, 60))
        workup = deterioration
        if _is_daytime(plan.intime, workup) and rng.random() >= min(c.microbio_daytime_rate[bucket], 1.0):
            workup = _defer_to_evening(plan.intime, workup)
        plan.label = 1
        plan.deterioration_min = deterioration
        plan.workup_min = workup
        plan.los_min = min(max(plan.los_min, workup + 6 * 60), 238 * 60)

    # ── events ────────────────────────────────────────────

    def _walk(self, rng: np.random.Generator, dyn: VitalDynamics, hours: np.ndarray,
              deterioration_h: Optional[float]) -> np.ndarray:
        target = np.full(len(hours), dyn.baseline)
        if deterioration_h is not None:
            ramp = self.config.ramp_hours
            if ramp > 0:
                progress = np.clip((hours - (deterioration_h - ramp)) / ramp, 0.0, 1.0)
            else:
                progress = (hours >= deterioration_h).astype(np.float64)
            target = target + dyn.sepsis_shift * progress
        noise = rng.normal(0.0, dyn.noise, size=len(hours))
        values = np.empty(len(hours))
        x = dyn.baseline + noise[0] if len(hours) else dyn.baseline
        for i in range(len(hours)):
            x = x + dyn.reversion * (target[i] - x) + (noise[i] if i else 0.0)
            values[i] = x
        return np.round(values, dyn.decimals)

    def _chart(self, rng, plan: _StayPlan, out: PatientTables) -> None:
        los_h = plan.los_min / 60.0
        hours = np.arange(int(math.ceil(los_h)), dtype=np.float64)
        det_h = plan.deterioration_min / 60.0 if plan.deterioration_min is not None else None
        for name in sorted(self.vitals):
            dyn = self.vitals[name]
            values = self._walk(rng, dyn, hours, det_h)
            minutes = (hours * 60 + rng.integers(0, 60, size=len(hours))).astype(np.int64)
            keep = (rng.random(len(hours)) < self.config.vital_sample_prob) & (minutes < plan.los_min)
            out.frame("chartevents", pd.DataFrame({
                "stay_id": plan.stay_id, "itemid": dyn.item_id,
                "charttime": _stamp(plan.intime, minutes[keep]).to_numpy(),
                "valuenum": values[keep], "value": "",
            }))
        # text-valued observation: feeding tube checks
        checks = np.arange(60, plan.los_min, 12 * 60)
        checks = checks[rng.random(len(checks)) < 0.2]
        out.frame("chartevents", pd.DataFrame({
            "stay_id": plan.stay_id, "itemid": FEEDING_TUBE,
            "charttime": _stamp(plan.intime, checks).to_numpy(), "valuenum": np.nan, "value": "Yes",
        }))

    def _labs(self, rng, plan: _StayPlan, out: PatientTables) -> None:
        interval = int(round(self.config.lab_interval_h * 60))
        draws = np.arange(15, plan.los_min, interval, dtype=np.int64)
        if plan.workup_min is not None:
            draws = np.union1d(draws, [plan.workup_min])
        hours = draws / 60.0
        septic = (draws >= plan.workup_min) if plan.workup_min is not None else np.zeros(len(draws), dtype=bool)

        columns: Dict[str, np.ndarray] = {}
        for item, baseline, noise, bound in (PLATELETS, CREATININE, BILIRUBIN):
            values = rng.normal(baseline, noise, size=len(draws))
            columns[item] = np.maximum(values, bound) if item == PLATELETS[0] else np.minimum(values, bound)
        mean, noise, low, high = PLATELETS_SEPTIC
        septic_platelets = np.clip(rng.normal(mean, noise, size=len(draws)), low, high)
        columns[PLATELETS[0]] = np.where(septic, septic_platelets, columns[PLATELETS[0]])

        det_h = plan.deterioration_min / 60.0 if plan.deterioration_min is not None else None
        for name in sorted(SIGNAL_LABS):
            dyn = SIGNAL_LABS[name]
            columns[dyn.item_id] = self._walk(rng, dyn, hours, det_h)

        stamps = _stamp(plan.intime, draws).to_numpy()
        for item in sorted(columns):
            out.frame("labevents", pd.DataFrame({
                "hadm_id": plan.hadm_id, "stay_id": plan.stay_id, "itemid": item,
                "charttime": stamps, "valuenum": np.round(columns[item], 2),
            }))

    def _poisson_times(self, rng, rate_per_day: float, los_min: int) -> np.ndarray:
        n = int(rng.poisson(rate_per_day * los_min / 1440.0))
        return np.sort(rng.integers(0, los_min, size=n)).astype(np.int64)

    def _microbiology(self, rng, plan: _StayPlan, bucket: int, out: PatientTables) -> None:
        rate = min(self.config.microbio_daytime_rate[bucket], 1.0)
        times = self._poisson_times(rng, self.config.culture_rate_per_day, plan.los_min)
        keep = np.array([not _is_daytime(plan.intime, t) or rng.random() < rate for t in times], dtype=bool)
        times = times[keep] if len(times) else times
        specimens = list(rng.choice(self.specimens, size=len(times), p=self.specimen_p[:, bucket]))
        if plan.workup_min is not None:
            times = np.append(times, plan.workup_min)
            specimens.append(WORKUP_SPECIMEN)
        stamps = _stamp(plan.intime, times)
        out.frame("microbiologyevents", pd.DataFrame({
            "hadm_id": plan.hadm_id,
            "charttime": stamps.to_numpy(),
            "chartdate": stamps.str.slice(0, 10).to_numpy(),
            "spec_type_desc": specimens,
        }))

    def _prescriptions(self, rng, plan: _StayPlan, out: PatientTables) -> None:
        orders = []
        for t in self._poisson_times(rng, self.config.antibiotic_rate_per_day, plan.los_min):
            orders.append((int(t), ANTIBIOTICS[int(rng.integers(len(ANTIBIOTICS)))]))
        for t in self._poisson_times(rng, OTHER_DRUG_RATE_PER_DAY, plan.los_min):
            orders.append((int(t), OTHER_DRUGS[int(rng.integers(len(OTHER_DRUGS)))]))
        if plan.workup_min is not None:
            orders.append((plan.workup_min + 30, ANTIBIOTICS[0]))
        orders.sort(key=lambda o: (o[0], o[1][1]))
        starts = np.array([o[0] for o in orders], dtype=np.int64)
        out.frame("prescriptions", pd.DataFrame({
            "hadm_id": plan.hadm_id,
            "starttime": _stamp(plan.intime, starts).to_numpy(),
            "stoptime": _stamp(plan.intime, starts + 24 * 60).to_numpy(),
            "drug": [o[1][1] for o in orders],
            "gsn": [o[1][0] for o in orders],
        }))

    def _procedures(self, rng, plan: _StayPlan, out: PatientTables) -> None:
        for item, p in ((CENTRAL_LINE, 0.4), (DRAIN, 0.1)):
            if rng.random() < p:
                t = int(rng.integers(0, plan.los_min))
                out.rows["procedureevents"].append((plan.stay_id, item, _stamp(plan.intime, [t]).iloc[0]))

    def _diagnoses(self, rng, plan: _StayPlan, flags: Sequence[int], out: PatientTables) -> None:
        version = 10 if plan.intime >= self.cutover else 9
        codes = [CONDITION_CODES[name][0 if version == 9 else 1] for name, f in zip(self.conditions, flags) if f]
        fillers = FILLER_CODES[version]
        codes += [fillers[int(i)] for i in rng.choice(len(fillers), size=int(rng.integers(1, 3)), replace=False)]
        for code in codes:
            out.rows["diagnoses_icd"].append((plan.hadm_id, code, version))

    def _stay(self, rng, plan: _StayPlan, bucket: int, flags: Sequence[int], out: PatientTables,
              patient_id: str) -> None:
        outtime = plan.intime + timedelta(minutes=plan.los_min)
        mortality = self.config.mortality[plan.label]
        plan.dies = bool(rng.random() < mortality)
        out.rows["icustays"].append((
            plan.stay_id, patient_id, plan.hadm_id,
            plan.intime.strftime(TIME_FORMAT), outtime.strftime(TIME_FORMAT),
        ))
        out.rows["admissions"].append((
            plan.hadm_id, patient_id,
            str(rng.choice(ETHNICITIES, p=ETHNICITY_P)), str(rng.choice(MARITAL, p=MARITAL_P)),
            outtime.strftime(TIME_FORMAT) if plan.dies else "",
        ))
        self._chart(rng, plan, out)
        self._labs(rng, plan, out)
        self._microbiology(rng, plan, bucket, out)
        self._prescriptions(rng, plan, out)
        self._procedures(rng, plan, out)
        self._diagnoses(rng, plan, flags, out)
        out.truth.append(GroundTruthRow(
            stay_id=plan.stay_id,
            patient_id=patient_id,
            year_bucket=YEAR_BUCKETS[bucket],
            label=plan.label,
            onset_time=float(plan.workup_min // 60) if plan.workup_min is not None else None,
            deterioration_time=plan.deterioration_min / 60.0 if plan.deterioration_min is not None else None,
            cohort_eligible=plan.eligible,
        ))

    def patient(self, unit: _Unit) -> PatientTables:
        c = self.config
        rng = np.random.default_rng([c.seed, unit.index])
        out = PatientTables()
        patient_id = str(SUBJECT_BASE + unit.index)
        b = unit.bucket

        kind = rng.random()
        pediatric = kind < c.frac_pediatric
        short = c.frac_pediatric <= kind < c.frac_pediatric + c.frac_short_stay
        long_ = c.frac_pediatric + c.frac_short_stay <= kind < c.frac_pediatric + c.frac_short_stay + c.frac_long_stay
        second = rng.random() < c.frac_second_stay

        age = int(rng.integers(0, 16)) if pediatric else int(rng.integers(18, 92))
        out.rows["patients"].append((patient_id, age, str(rng.choice(["F", "M"])), YEAR_BUCKETS[b]))
        flags = [int(rng.random() < c.condition_prevalence[name]) for name in self.conditions]

        first = _StayPlan(
            stay_id=str(STAY_BASE + unit.index), hadm_id=str(HADM_BASE + unit.index),
            intime=self._intime(rng, b), los_min=self._los_minutes(rng), eligible=not pediatric,
        )
        if short:
            first.los_min = int(rng.integers(4 * 60, 23 * 60))
            first.eligible = False
        elif long_:
            first.los_min = int(rng.integers(245 * 60, 400 * 60))
            first.eligible = False
        elif rng.random() < self._septic_probability(b, flags):
            self._plan_sepsis(rng, first, b)
        self._stay(rng, first, b, flags, out, patient_id)

        if second:
            later = first.intime + timedelta(minutes=first.los_min) + timedelta(days=int(rng.integers(30, 200)))
            plan = _StayPlan(
                stay_id=str(STAY_BASE + SECOND_OFFSET + unit.index),
                hadm_id=str(HADM_BASE + SECOND_OFFSET + unit.index),
                intime=later, los_min=self._los_minutes(rng),
                # the later stay enters the cohort only when the first one fails the stay-length filter
                eligible=not pediatric and (short or long_),
            )
            if rng.random() < self._septic_probability(b, flags):
                self._plan_sepsis(rng, plan, b)
            self._stay(rng, plan, b, flags, out, patient_id)
        return out


# ── Output ────────────────────────────────────────────────────

@dataclass
class GenerationResult:
    out_dir: Path
    paths: List[Path]
    ground_truth: List[GroundTruthRow]
    counts: Dict[str, int]

    @property
    def n_positive(self) -> int:
        return sum(r.label for r in self.ground_truth if r.cohort_eligible)


def _table_frame(table: str, parts: List[PatientTables]) -> pd.DataFrame:
    columns = TABLE_SCHEMAS[table].columns
    frames = [f for p in parts for f in p.frames.get(table, [])]
    rows = [r for p in parts for r in p.rows[table]]
    if rows:
        frames.append(pd.DataFrame(rows, columns=columns))
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)[columns]


def ground_truth_frame(rows: Sequence[GroundTruthRow]) -> pd.DataFrame:
    columns = list(GroundTruthRow.model_fields)
    df = pd.DataFrame([r.model_dump() for r in rows], columns=columns)
    df["cohort_eligible"] = df["cohort_eligible"].astype(int)
    return df


def _summary(config: SynthConfig, truth: Sequence[GroundTruthRow], counts: Mapping[str, int]) -> dict:
    per_bucket = {}
    for b in YEAR_BUCKETS:
        eligible = [r for r in truth if r.cohort_eligible and r.year_bucket == b]
        onsets = [r.onset_time for r in eligible if r.label and r.onset_time is not None]
        per_bucket[b] = {
            "stays": len(eligible),
            "positive": sum(r.label for r in eligible),
            "mean_onset_h": float(np.mean(onsets)) if onsets else None,
        }
    return {
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config),
        "tool_version": APP_VERSION,
        "rows": dict(counts),
        "buckets": per_bucket,
    }


def generate(config: SynthConfig, out_dir: Path, threads: int = 1) -> GenerationResult:
    """Write the nine tables plus ground truth into ``out_dir``."""
    check_conditions(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    units: List[_Unit] = []
    for b, n in enumerate(config.n_patients):
        start = len(units)
        units.extend(_Unit(index=start + i, bucket=b) for i in range(n))

    sim = _Simulator(config)
    parts = parallel_map(sim.patient, units, threads)

    paths: List[Path] = []
    counts: Dict[str, int] = {}
    for table in TABLE_SCHEMAS:
        df = _table_frame(table, parts)
        counts[table] = len(df)
        paths.append(write_csv(df, out_dir / f"{table}.csv", float_format="%.6g"))

    truth = [r for p in parts for r in p.truth]
    paths.append(write_csv(ground_truth_frame(truth), out_dir / GROUND_TRUTH_CSV, float_format="%.6g"))
    paths.append(write_json(out_dir / GROUND_TRUTH_JSON, _summary(config, truth, counts)))

    result = GenerationResult(out_dir=out_dir, paths=paths, ground_truth=truth, counts=counts)
    logger.info(
        f"Generated {len(units)} patients, {len(truth)} stays ({result.n_positive} eligible positives) "
        f"into {out_dir}"
    )
    return result
