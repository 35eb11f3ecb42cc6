"""
config/experiment.py
Experiment files (TOML): which feature sets, models, regimes and seeds to run, where the
tables come from, split ratios, and overrides for training and labeling settings.

    name = "full_grid"
    task = "sepsis"
    feature_sets = ["dascena", "epic"]
    models = ["rnn", "logistic"]
    regimes = ["year_agnostic", "year_bucket"]
    seeds = [0, 1, 2]

    [data]
    synth = "synth_default.toml"      # or: tables = "/path/to/mimic-iv"

    [split]
    ratios = [0.7, 0.15, 0.15]

    [train]
    max_epochs = 30

    [settings.soi]
    abx_window_h = 72
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import Settings, line_of_key, read_toml
from shared.exceptions import ConfigError
from shared.schemas.schemas import ModelKind, Regime, Task, TrainConfig

_SETTINGS_SECTIONS = ("cohort", "soi", "sofa", "antibiotics", "ingest")


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=True)


class DataSection(_Section):
    tables: Optional[Path] = None
    synth: Optional[Path] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DataSection":
        if (self.tables is None) == (self.synth is None):
            raise ValueError("set exactly one of data.tables or data.synth")
        return self


class SplitSection(_Section):
    ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    year_bucket_ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15)

    @field_validator("ratios", "year_bucket_ratios")
    @classmethod
    def _sum_to_one(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(r < 0 for r in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("ratios must be non-negative and sum to 1")
        return v


class ExperimentConfig(_Section):
    name: str = "experiment"
    task: Task = Task.SEPSIS
    feature_sets: List[str] = Field(default_factory=lambda: ["dascena", "epic"])
    models: List[ModelKind] = Field(default_factory=lambda: [ModelKind.RNN, ModelKind.LOGISTIC])
    regimes: List[Regime] = Field(default_factory=lambda: [Regime.YEAR_AGNOSTIC, Regime.YEAR_BUCKET])
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    label_seed: int = Field(0, ge=0)
    data: DataSection
    split: SplitSection = Field(default_factory=SplitSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    settings: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    threads: int = Field(0, ge=0)

    @field_validator("feature_sets", "models", "regimes", "seeds")
    @classmethod
    def _non_empty(cls, v: List[Any]) -> List[Any]:
        if not v:
            raise ValueError("must list at least one entry")
        if len(set(map(str, v))) != len(v):
            raise ValueError("entries must be unique")
        return v

    @field_validator("settings")
    @classmethod
    def _known_sections(cls, v: Dict[str, Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
        unknown = sorted(set(v) - set(_SETTINGS_SECTIONS))
        if unknown:
            raise ValueError(f"unknown settings sections {unknown}; allowed: {list(_SETTINGS_SECTIONS)}")
        return v

    @property
    def n_cells(self) -> int:
        return len(self.feature_sets) * len(self.models) * len(self.regimes) * len(self.seeds)

    def overrides(self) -> Dict[str, Any]:
        return {f"{section}.{key}": value for section, values in self.settings.items() for key, value in values.items()}

    def pipeline_settings(self, base: Settings) -> Settings:
        return base.with_overrides(self.overrides()).with_overrides({"runtime.threads": self.threads})

    def with_seeds(self, seeds: List[int]) -> "ExperimentConfig":
        return self.model_copy(update={"seeds": list(seeds), "label_seed": seeds[0]})


def _resolve_paths(raw: Dict[str, Any], base_dir: Path) -> Dict[str, Any]:
    data = dict(raw.get("data", {}))
    for key in ("tables", "synth"):
        if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
            data[key] = str(base_dir / data[key])
    resolved = dict(raw)
    if data:
        resolved["data"] = data
    resolved["feature_sets"] = [
        str(base_dir / f) if isinstance(f, str) and f.endswith(".toml") and not Path(f).is_absolute() else f
        for f in raw.get("feature_sets", ["dascena", "epic"])
    ]
    return resolved


def load_experiment(path: Path) -> ExperimentConfig:
    """Parse and validate an experiment file; relative paths resolve against its directory."""
    path = Path(path)
    raw = _resolve_paths(read_toml(path), path.parent)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        dotted = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ConfigError(err["msg"], key=dotted, line=line_of_key(path, dotted), path=path) from exc
