"""
shared/schemas/schemas.py
All Pydantic v2 records exchanged between pipeline stages.
Records are frozen: once built they are safe to share between threads.
"""

from datetime import date, datetime
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator


# ── Enumerations ──────────────────────────────────────────────

class YearBucket(str, Enum):
    Y2008_2010 = "2008-2010"
    Y2011_2013 = "2011-2013"
    Y2014_2016 = "2014-2016"
    Y2017_2019 = "2017-2019"


YEAR_BUCKETS: List[str] = [b.value for b in YearBucket]
TRAIN_BUCKET: str = YearBucket.Y2008_2010.value


class EventSource(str, Enum):
    CHART = "chart"
    LAB = "lab"
    PRESCRIPTION = "prescription"
    MICROBIOLOGY = "microbiology"
    PROCEDURE = "procedure"
    DIAGNOSIS = "diagnosis"


class Aggregation(str, Enum):
    MEAN = "mean"
    SUM = "sum"


class FeatureSetName(str, Enum):
    DASCENA = "dascena"
    EPIC = "epic"
    EPIC_MINUS_ICD = "epic_minus_icd"
    CUSTOM = "custom"


class StaticEncoding(str, Enum):
    REAL = "real"
    ONE_HOT = "one_hot"


class ModelKind(str, Enum):
    LOGISTIC = "logistic"
    RNN = "rnn"


class Regime(str, Enum):
    YEAR_AGNOSTIC = "year_agnostic"
    YEAR_BUCKET = "year_bucket"


class SplitRole(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class Task(str, Enum):
    SEPSIS = "sepsis"
    LOS = "los"
    MORTALITY = "mortality"


class CellStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"


# ── Base ──────────────────────────────────────────────────────

class BaseSchema(BaseModel):
    model_config = ConfigDict(frozen=True, use_enum_values=True, validate_default=True, extra="forbid")


# ── Ingest ────────────────────────────────────────────────────

class PatientRecord(BaseSchema):
    patient_id: str
    anchor_age: int = Field(..., ge=0)
    gender: str
    anchor_year_group: YearBucket


class IcuStayRecord(BaseSchema):
    stay_id: str
    patient_id: str
    admission_id: str
    intime: datetime
    outtime: datetime

    @model_validator(mode="after")
    def _outtime_after_intime(self) -> "IcuStayRecord":
        if self.outtime <= self.intime:
            raise ValueError(f"stay {self.stay_id}: outtime must be after intime")
        return self

    @computed_field
    @property
    def los_hours(self) -> float:
        return (self.outtime - self.intime).total_seconds() / 3600.0


class AdmissionRecord(BaseSchema):
    admission_id: str
    patient_id: str
    ethnicity: Optional[str] = None
    marital_status: Optional[str] = None
    deathtime: Optional[datetime] = None


class EventRecord(BaseSchema):
    stay_id: str
    source: EventSource
    item_id: str
    value: Optional[float] = None
    value_text: Optional[str] = None
    charttime: Optional[datetime] = None
    icd_version: Optional[int] = None

    @model_validator(mode="after")
    def _source_rules(self) -> "EventRecord":
        if self.source == EventSource.DIAGNOSIS:
            if self.icd_version not in (9, 10):
                raise ValueError("diagnosis events carry icd_version 9 or 10")
        elif self.charttime is None:
            raise ValueError(f"{self.source} events carry a charttime")
        return self


class TableSchema(BaseSchema):
    name: str
    required: Dict[str, str]          # column -> type ("str", "int", "float", "datetime")
    optional: Dict[str, str] = Field(default_factory=dict)
    any_of: Tuple[str, ...] = ()      # at least one of these optional columns must exist

    @property
    def columns(self) -> List[str]:
        return list(self.required) + list(self.optional)


# ── Cohort ────────────────────────────────────────────────────

class CohortStay(BaseSchema):
    stay_id: str
    patient_id: str
    admission_id: str
    age: int
    year_bucket: YearBucket
    los_hours: float
    intime: datetime
    outtime: datetime
    onset_time: Optional[float] = None
    label: Optional[int] = None
    gender: Optional[str] = None
    ethnicity: Optional[str] = None
    marital_status: Optional[str] = None
    deathtime: Optional[datetime] = None


class WindowAnchor(BaseSchema):
    stay_id: str
    onset_time: float
    window_start: float
    window_end: float

    @model_validator(mode="after")
    def _window_shape(self) -> "WindowAnchor":
        if abs((self.window_end - self.window_start) - 24.0) > 1e-9:
            raise ValueError("window must span exactly 24 hours")
        if self.window_end < 0:
            raise ValueError(f"stay {self.stay_id}: window_end {self.window_end} < 0")
        return self


class ManifestRow(BaseSchema):
    """One line of the cohort manifest, the contract between pipeline stages."""
    stay_id: str
    label: int
    onset_time: float
    year_bucket: YearBucket
    pad_hours: int = Field(..., ge=0, le=24)


# ── Sepsis labelling ──────────────────────────────────────────

class SuspicionOfInfection(BaseSchema):
    soi_time: float
    antibiotic_time: float
    culture_time: float

    @model_validator(mode="after")
    def _soi_is_earlier_event(self) -> "SuspicionOfInfection":
        if self.soi_time != min(self.antibiotic_time, self.culture_time):
            raise ValueError("soi_time must equal the earlier of antibiotic/culture time")
        return self


class SepsisOnset(BaseSchema):
    onset_time: float
    soi: SuspicionOfInfection
    sofa_delta: int = Field(..., ge=1)


class LabelRow(BaseSchema):
    stay_id: str
    label: int
    onset_time: Optional[float] = None
    soi_time: Optional[float] = None
    sofa_delta: Optional[int] = None


# ── Features ──────────────────────────────────────────────────

class HourlyFeature(BaseSchema):
    name: str
    item_ids: Tuple[str, ...]
    aggregation: Aggregation = Aggregation.MEAN
    source: EventSource = EventSource.CHART


class StaticFeature(BaseSchema):
    name: str
    source: str                       # "patients" | "admissions"
    column: str
    encoding: StaticEncoding = StaticEncoding.ONE_HOT


class IcdFeature(BaseSchema):
    name: str
    codes: Tuple[str, ...]
    icd_version: int

    @field_validator("icd_version")
    @classmethod
    def _known_version(cls, v: int) -> int:
        if v not in (9, 10):
            raise ValueError("icd_version must be 9 or 10")
        return v

    @property
    def column(self) -> str:
        return f"icd{self.icd_version}:{self.name}"


class FeatureSetSpec(BaseSchema):
    name: FeatureSetName
    title: str = ""
    hourly_features: List[HourlyFeature] = Field(default_factory=list)
    static_features: List[StaticFeature] = Field(default_factory=list)
    icd_features: List[IcdFeature] = Field(default_factory=list)

    @property
    def hourly_names(self) -> List[str]:
        return [f.name for f in self.hourly_features]

    @property
    def n_hourly(self) -> int:
        return len(self.hourly_features)

    def without_icd(self) -> "FeatureSetSpec":
        name = FeatureSetName.EPIC_MINUS_ICD.value if self.name == FeatureSetName.EPIC else self.name
        return self.model_copy(update={"name": name, "icd_features": []})


# ── Models ────────────────────────────────────────────────────

class TrainConfig(BaseSchema):
    seed: int = Field(0, ge=0)
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(64, gt=0)
    max_epochs: int = Field(100, gt=0)
    patience: int = Field(10, gt=0)
    l2: float = Field(1e-4, ge=0)
    hidden_size: int = Field(64, gt=0)
    optimizer: OptimizerKind = OptimizerKind.ADAM
    adam_beta1: float = Field(0.9, gt=0, lt=1)
    adam_beta2: float = Field(0.999, gt=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    bn_momentum: float = Field(0.1, gt=0, le=1)
    bn_eps: float = Field(1e-5, gt=0)
    class_weighting: bool = True


# ── Evaluation ────────────────────────────────────────────────

class SplitAssignment(BaseSchema):
    role: SplitRole
    bucket: YearBucket


class SplitPlan(BaseSchema):
    regime: Regime
    seed: int
    ratios: Tuple[float, float, float]
    assignments: Dict[str, SplitAssignment]

    @model_validator(mode="after")
    def _no_leak(self) -> "SplitPlan":
        if self.regime == Regime.YEAR_BUCKET:
            for stay_id, a in self.assignments.items():
                if a.role != SplitRole.TEST and a.bucket != TRAIN_BUCKET:
                    raise ValueError(f"stay {stay_id} from {a.bucket} assigned to {a.role}")
        return self

    def stays(self, role: SplitRole, bucket: Optional[str] = None) -> List[str]:
        return sorted(
            s for s, a in self.assignments.items()
            if a.role == role and (bucket is None or a.bucket == bucket)
        )

    def test_buckets(self) -> List[str]:
        present = {a.bucket for a in self.assignments.values() if a.role == SplitRole.TEST}
        return [b for b in YEAR_BUCKETS if b in present]


class ExperimentResult(BaseSchema):
    task: Task = Task.SEPSIS
    feature_set: str
    model_kind: ModelKind
    regime: Regime
    test_bucket: str                  # a bucket label, or "all" for year-agnostic
    seed: int
    auc: float = Field(..., ge=0.0, le=1.0)
    n: int = Field(..., ge=0)
    n_pos: int = Field(..., ge=0)


# ── Drift report ──────────────────────────────────────────────

class BucketSeries(BaseSchema):
    bucket: str
    bins: List[str]
    counts: List[int]
    normalized: Optional[List[float]] = None
    per_stay: Optional[List[float]] = None
    mean: Optional[float] = None
    daytime_share: Optional[float] = None      # clock-hour series only
    flagged: bool = False
    note: Optional[str] = None

    @model_validator(mode="after")
    def _shape(self) -> "BucketSeries":
        if len(self.counts) != len(self.bins):
            raise ValueError("counts and bins differ in length")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be nonnegative")
        if self.normalized is not None:
            if len(self.normalized) != len(self.bins):
                raise ValueError("normalized and bins differ in length")
            if abs(sum(self.normalized) - 1.0) > 1e-9:
                raise ValueError("normalized series must sum to 1")
        return self

    @property
    def total(self) -> int:
        return int(sum(self.counts))


class SpecimenChangeRow(BaseSchema):
    specimen: str
    counts: Tuple[int, int, int, int]
    change: int
    pct_change: float

    @model_validator(mode="after")
    def _change_is_last_minus_first(self) -> "SpecimenChangeRow":
        if self.change != self.counts[-1] - self.counts[0]:
            raise ValueError("change must equal last bucket minus first bucket")
        return self

    @classmethod
    def from_counts(cls, specimen: str, counts: Tuple[int, int, int, int]) -> "SpecimenChangeRow":
        first, last = counts[0], counts[-1]
        change = last - first
        if first == 0:
            pct = 1.0 if change > 0 else 0.0
        else:
            pct = change / first
        return cls(specimen=specimen, counts=tuple(counts), change=change, pct_change=pct)

    @property
    def pct_label(self) -> str:
        pct = round(self.pct_change * 100)
        return f"+{pct}%" if pct > 0 else f"{pct}%"


# ── Synthetic generator ───────────────────────────────────────

class VitalDynamics(BaseSchema):
    item_id: str
    baseline: float
    sepsis_shift: float
    noise: float = Field(..., ge=0)
    reversion: float = Field(0.3, gt=0, le=1)
    decimals: int = 1


class SynthConfig(BaseSchema):
    seed: int = Field(0, ge=0)
    n_patients: Tuple[int, int, int, int] = (500, 500, 500, 500)
    prevalence: Tuple[float, float, float, float] = (0.2, 0.2, 0.2, 0.2)
    onset_mean: Tuple[float, float, float, float] = (9.0, 9.5, 10.0, 12.0)
    onset_spread: Tuple[float, float, float, float] = (3.0, 3.0, 3.0, 3.0)
    icd_cutover: date = date(2015, 10, 1)              # admissions on or after use ICD-10
    microbio_daytime_rate: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    culture_rate_per_day: float = Field(0.5, ge=0)
    antibiotic_rate_per_day: float = Field(0.4, ge=0)
    vitals: Dict[str, VitalDynamics] = Field(default_factory=dict)
    vital_sample_prob: float = Field(0.85, ge=0, le=1)
    ramp_hours: float = Field(18.0, ge=0)
    lab_interval_h: float = Field(8.0, gt=0)
    condition_prevalence: Dict[str, float] = Field(default_factory=dict)
    condition_odds_ratio: float = Field(4.0, gt=0)
    mortality: Tuple[float, float] = (0.03, 0.15)      # (control, septic)
    los_median_h: float = Field(60.0, gt=0)
    los_sigma: float = Field(0.45, gt=0)
    frac_pediatric: float = Field(0.02, ge=0, le=1)
    frac_short_stay: float = Field(0.04, ge=0, le=1)
    frac_long_stay: float = Field(0.02, ge=0, le=1)
    frac_second_stay: float = Field(0.1, ge=0, le=1)
    specimen_mix: Dict[str, Tuple[float, float, float, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _rates(self) -> "SynthConfig":
        if any(not (0.0 < p < 1.0) for p in self.prevalence):
            raise ValueError("prevalences must lie in (0, 1)")
        if any(r < 0 for r in self.microbio_daytime_rate):
            raise ValueError("microbio_daytime_rate must be >= 0")
        if any(n < 0 for n in self.n_patients):
            raise ValueError("n_patients must be >= 0")
        if any(s <= 0 for s in self.onset_spread):
            raise ValueError("onset_spread must be > 0")
        for name, p in self.condition_prevalence.items():
            if not (0.0 <= p < 1.0):
                raise ValueError(f"condition prevalence for {name} must lie in [0, 1)")
        for spec, weights in self.specimen_mix.items():
            if any(w < 0 for w in weights):
                raise ValueError(f"specimen weights for {spec} must be >= 0")
        return self


class GroundTruthRow(BaseSchema):
    stay_id: str
    patient_id: str
    year_bucket: YearBucket
    label: int
    onset_time: Optional[float] = None
    deterioration_time: Optional[float] = None
    cohort_eligible: bool = True


# ── Run manifest ──────────────────────────────────────────────

class StageRecord(BaseModel):
    stage: str
    status: CellStatus = CellStatus.OK
    seconds: float = 0.0
    outputs: List[str] = Field(default_factory=list)
    detail: Dict[str, object] = Field(default_factory=dict)
    error: Optional[str] = None


class RunManifest(BaseModel):
    """Mutable while a command runs; serialized once at the end."""
    model_config = ConfigDict(use_enum_values=True)

    config_hash: str
    tool_version: str
    command: str
    seeds: List[int] = Field(default_factory=list)
    lab_join_key: Optional[str] = None
    stages: List[StageRecord] = Field(default_factory=list)

    def record(self, stage: StageRecord) -> StageRecord:
        self.stages.append(stage)
        return stage

    @property
    def outputs(self) -> List[str]:
        return [o for s in self.stages for o in s.outputs]
