"""
shared/models/models.py
Numpy-backed containers for per-stay and per-dataset arrays.
Arrays are made read-only on construction so containers can be shared between threads.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from shared.exceptions import DimensionMismatchError

ORGANS: Tuple[str, ...] = ("respiration", "coagulation", "liver", "cardiovascular", "cns", "renal")
WINDOW_HOURS = 24


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ── SOFA ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class SofaSeries:
    """Hourly SOFA subscores (hours × 6, organ order ORGANS) and their totals."""
    subscores: np.ndarray
    unscoreable: Tuple[int, ...] = (0, 0, 0, 0, 0, 0)   # hours with no data, per organ
    default_weight_hours: int = 0

    def __post_init__(self):
        sub = np.asarray(self.subscores)
        if sub.ndim != 2 or sub.shape[1] != len(ORGANS):
            raise DimensionMismatchError(f"subscores must be hours x {len(ORGANS)}, got {sub.shape}")
        if sub.size and (sub.min() < 0 or sub.max() > 4):
            raise ValueError("subscores must lie in 0..4")
        object.__setattr__(self, "subscores", _frozen(sub, np.int64))

    @property
    def n_hours(self) -> int:
        return int(self.subscores.shape[0])

    @property
    def totals(self) -> np.ndarray:
        return self.subscores.sum(axis=1)

    @property
    def baseline(self) -> int:
        return int(self.subscores[0].sum()) if self.n_hours else 0

    @classmethod
    def from_totals(cls, totals: Sequence[int]) -> "SofaSeries":
        """Series whose totals are carried by the first organs; used for fixtures."""
        totals = np.asarray(totals, dtype=np.int64)
        sub = np.zeros((len(totals), len(ORGANS)), dtype=np.int64)
        remaining = totals.copy()
        for j in range(len(ORGANS)):
            take = np.minimum(remaining, 4)
            sub[:, j] = take
            remaining -= take
        if np.any(remaining > 0):
            raise ValueError("totals must lie in 0..24")
        return cls(subscores=sub)


# ── Feature grids ─────────────────────────────────────────────

@dataclass(frozen=True)
class HourlyMatrix:
    """24 × F aggregated values; ``present`` marks hours with at least one measurement."""
    values: np.ndarray
    present: np.ndarray
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        if np.shape(self.values) != np.shape(self.present):
            raise DimensionMismatchError("values and present differ in shape")
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        object.__setattr__(self, "present", _frozen(self.present, bool))

    @property
    def n_features(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class StayWindow:
    stay_id: str
    hourly: np.ndarray                # 24 × F, NaN = missing inside stay, 0 = pad
    present: np.ndarray               # 24 × F
    static: np.ndarray                # S
    pad_hours: int
    label: int
    year_bucket: str

    def __post_init__(self):
        if not 0 <= self.pad_hours <= WINDOW_HOURS:
            raise ValueError(f"pad_hours {self.pad_hours} outside [0, {WINDOW_HOURS}]")
        object.__setattr__(self, "hourly", _frozen(self.hourly, np.float64))
        object.__setattr__(self, "present", _frozen(self.present, bool))
        object.__setattr__(self, "static", _frozen(self.static, np.float64))

    def matrix(self) -> HourlyMatrix:
        return HourlyMatrix(values=self.hourly, present=self.present)


@dataclass(frozen=True)
class ModelInput:
    """Hourly block is 24 × 3F laid out as [values | missing flags | hours since last]."""
    hourly: np.ndarray
    static: np.ndarray
    label: int = 0

    def __post_init__(self):
        hourly = np.asarray(self.hourly)
        if hourly.ndim != 2 or hourly.shape[1] % 3:
            raise DimensionMismatchError(f"hourly block width must be a multiple of 3, got {hourly.shape}")
        object.__setattr__(self, "hourly", _frozen(hourly, np.float64))
        object.__setattr__(self, "static", _frozen(np.ravel(self.static), np.float64))

    @property
    def n_features(self) -> int:
        return int(self.hourly.shape[1] // 3)

    @property
    def n_static(self) -> int:
        return int(self.static.shape[0])


@dataclass(frozen=True)
class ModelDataset:
    """A stack of ModelInputs with their stay ids and year buckets."""
    hourly: np.ndarray                # N × T × 3F
    static: np.ndarray                # N × S
    labels: np.ndarray                # N
    stay_ids: Tuple[str, ...]
    buckets: Tuple[str, ...]
    patient_ids: Tuple[str, ...] = ()
    hourly_channels: Tuple[str, ...] = ()
    static_channels: Tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.stay_ids)
        hourly = np.asarray(self.hourly, dtype=np.float64)
        if hourly.ndim != 3:
            if n:
                raise DimensionMismatchError(f"hourly must be N x T x 3F, got {hourly.shape}")
            hourly = np.zeros((0, WINDOW_HOURS, 0))
        static = np.asarray(self.static, dtype=np.float64)
        if static.ndim != 2:
            static = static.reshape(n, -1) if n else np.zeros((0, 0))
        if hourly.shape[0] != n or static.shape[0] != n or len(self.labels) != n or len(self.buckets) != n:
            raise DimensionMismatchError("dataset arrays disagree on the number of stays")
        if self.patient_ids and len(self.patient_ids) != n:
            raise DimensionMismatchError("patient_ids length differs from stays")
        object.__setattr__(self, "hourly", _frozen(hourly, np.float64))
        object.__setattr__(self, "static", _frozen(static, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "stay_ids", tuple(self.stay_ids))
        object.__setattr__(self, "buckets", tuple(self.buckets))
        object.__setattr__(self, "patient_ids", tuple(self.patient_ids) or tuple(self.stay_ids))

    def __len__(self) -> int:
        return len(self.stay_ids)

    @property
    def n_features(self) -> int:
        return int(self.hourly.shape[2] // 3) if self.hourly.ndim == 3 else 0

    @property
    def n_static(self) -> int:
        return int(self.static.shape[1])

    @property
    def n_hours(self) -> int:
        return int(self.hourly.shape[1])

    def item(self, i: int) -> ModelInput:
        return ModelInput(hourly=self.hourly[i], static=self.static[i], label=int(self.labels[i]))

    def subset(self, indices: Sequence[int]) -> "ModelDataset":
        idx = np.asarray(list(indices), dtype=np.int64)
        return ModelDataset(
            hourly=self.hourly[idx],
            static=self.static[idx],
            labels=self.labels[idx],
            stay_ids=tuple(self.stay_ids[i] for i in idx),
            buckets=tuple(self.buckets[i] for i in idx),
            patient_ids=tuple(self.patient_ids[i] for i in idx),
            hourly_channels=self.hourly_channels,
            static_channels=self.static_channels,
            meta=dict(self.meta),
        )

    def select(self, stay_ids: Sequence[str]) -> "ModelDataset":
        pos = {s: i for i, s in enumerate(self.stay_ids)}
        return self.subset([pos[s] for s in stay_ids if s in pos])

    def with_arrays(self, hourly: np.ndarray, static: np.ndarray) -> "ModelDataset":
        return ModelDataset(
            hourly=hourly, static=static, labels=self.labels, stay_ids=self.stay_ids,
            buckets=self.buckets, patient_ids=self.patient_ids,
            hourly_channels=self.hourly_channels, static_channels=self.static_channels,
            meta=dict(self.meta),
        )

    def with_labels(self, labels: Sequence[int]) -> "ModelDataset":
        return ModelDataset(
            hourly=self.hourly, static=self.static, labels=np.asarray(labels), stay_ids=self.stay_ids,
            buckets=self.buckets, patient_ids=self.patient_ids,
            hourly_channels=self.hourly_channels, static_channels=self.static_channels,
            meta=dict(self.meta),
        )

    @classmethod
    def from_inputs(
        cls,
        inputs: List[ModelInput],
        stay_ids: Sequence[str],
        buckets: Sequence[str],
        patient_ids: Optional[Sequence[str]] = None,
    ) -> "ModelDataset":
        if not inputs:
            raise DimensionMismatchError("cannot build a dataset from zero inputs")
        return cls(
            hourly=np.stack([x.hourly for x in inputs]),
            static=np.stack([x.static for x in inputs]),
            labels=np.array([x.label for x in inputs], dtype=np.int64),
            stay_ids=tuple(stay_ids),
            buckets=tuple(buckets),
            patient_ids=tuple(patient_ids or ()),
        )
