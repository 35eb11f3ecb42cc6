"""
services/features/standardize.py
Per-channel standardisation fit on the training split only: value channels and continuous
static columns are z-scored (a zero-std channel passes through unchanged), missing flags are
left alone and hours-since-last is divided by 24.
"""

import json
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from shared.exceptions import DimensionMismatchError, EmptySplitError
from shared.models.models import WINDOW_HOURS, ModelDataset


class Standardizer:
    def __init__(
        self,
        value_mean: np.ndarray,
        value_std: np.ndarray,
        static_mean: np.ndarray,
        static_std: np.ndarray,
    ):
        self.value_mean = np.asarray(value_mean, dtype=np.float64)
        self.value_std = np.asarray(value_std, dtype=np.float64)
        self.static_mean = np.asarray(static_mean, dtype=np.float64)
        self.static_std = np.asarray(static_std, dtype=np.float64)

    @property
    def n_features(self) -> int:
        return int(self.value_mean.shape[0])

    @staticmethod
    def _moments(x: np.ndarray, axis) -> Tuple[np.ndarray, np.ndarray]:
        mean = x.mean(axis=axis)
        std = x.std(axis=axis)
        constant = std == 0
        return np.where(constant, 0.0, mean), np.where(constant, 1.0, std)

    @classmethod
    def fit(
        cls,
        hourly: np.ndarray,
        static: np.ndarray,
        continuous_mask: Optional[Sequence[bool]] = None,
    ) -> "Standardizer":
        hourly = np.asarray(hourly, dtype=np.float64)
        static = np.asarray(static, dtype=np.float64)
        if hourly.shape[0] == 0:
            raise EmptySplitError("cannot fit standardisation on an empty training split")
        n_feat = hourly.shape[2] // 3
        value_mean, value_std = cls._moments(hourly[:, :, :n_feat].reshape(-1, n_feat), axis=0)

        n_static = static.shape[1]
        mask = np.zeros(n_static, dtype=bool) if continuous_mask is None else np.asarray(continuous_mask, dtype=bool)
        if mask.shape != (n_static,):
            raise DimensionMismatchError(f"continuous mask has {mask.shape[0]} entries for {n_static} static columns")
        static_mean, static_std = cls._moments(static, axis=0) if n_static else (np.zeros(0), np.ones(0))
        static_mean = np.where(mask, static_mean, 0.0)
        static_std = np.where(mask, static_std, 1.0)
        return cls(value_mean, value_std, static_mean, static_std)

    @classmethod
    def fit_dataset(cls, dataset: ModelDataset, continuous_mask: Optional[Sequence[bool]] = None) -> "Standardizer":
        return cls.fit(dataset.hourly, dataset.static, continuous_mask)

    def transform_arrays(self, hourly: np.ndarray, static: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        hourly = np.array(hourly, dtype=np.float64, copy=True)
        static = np.array(static, dtype=np.float64, copy=True)
        f = self.n_features
        if hourly.shape[-1] != 3 * f or static.shape[-1] != self.static_mean.shape[0]:
            raise DimensionMismatchError(
                f"standardiser fit on F={f}, S={self.static_mean.shape[0]}; got hourly width "
                f"{hourly.shape[-1]} and static width {static.shape[-1]}"
            )
        hourly[..., :f] = (hourly[..., :f] - self.value_mean) / self.value_std
        hourly[..., 2 * f:] = hourly[..., 2 * f:] / WINDOW_HOURS
        static = (static - self.static_mean) / self.static_std
        return hourly, static

    def transform(self, dataset: ModelDataset) -> ModelDataset:
        hourly, static = self.transform_arrays(dataset.hourly, dataset.static)
        return dataset.with_arrays(hourly, static)

    def to_json(self) -> str:
        return json.dumps({
            "value_mean": self.value_mean.tolist(),
            "value_std": self.value_std.tolist(),
            "static_mean": self.static_mean.tolist(),
            "static_std": self.static_std.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, payload: str) -> "Standardizer":
        data = json.loads(payload)
        return cls(data["value_mean"], data["value_std"], data["static_mean"], data["static_std"])

    def save(self, path: Path) -> Path:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
        return Path(path)


def standardize(train: ModelDataset, *others: ModelDataset,
                continuous_mask: Optional[Sequence[bool]] = None) -> Tuple[Standardizer, Tuple[ModelDataset, ...]]:
    """Fit on ``train`` and apply the same transform to every split, train included."""
    scaler = Standardizer.fit_dataset(train, continuous_mask)
    return scaler, tuple(scaler.transform(d) for d in (train, *others))
