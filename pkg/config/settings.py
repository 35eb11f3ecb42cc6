"""
config/settings.py
Pipeline settings: labeling windows, cohort filters, SOFA options, training defaults.
Uses Pydantic BaseSettings for validation; values come from TOML files and explicit
CLI overrides only (environment variables are ignored).
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from shared.exceptions import ConfigError, InputMissingError
from shared.schemas.schemas import TrainConfig

APP_NAME = "sepsis-drift-workbench"
APP_VERSION = "1.0.0"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ── Sections ──────────────────────────────────────────────────

class CohortSettings(_Section):
    min_age: int = 15                 # strict: age must exceed this
    min_los_h: float = 24.0
    max_los_h: float = 240.0
    window_h: int = 24
    gap_h: float = 6.0
    los_label_h: float = 72.0


class SoiSettings(_Section):
    abx_window_h: float = Field(72.0, ge=0)       # culture first, antibiotic within
    culture_window_h: float = Field(24.0, ge=0)   # antibiotic first, culture within


class SofaSettings(_Section):
    window_pre_h: float = Field(48.0, ge=0)
    window_post_h: float = Field(24.0, ge=0)
    delta: int = Field(2, ge=1)
    baseline: Literal["first_hour", "rolling_min"] = "first_hour"   # rolling_min is non-canonical
    default_weight_kg: float = Field(80.0, gt=0)


class AntibioticSettings(_Section):
    gsn_codes: List[str] = Field(default_factory=lambda: [
        "008880", "043350",                                       # penicillin
        "043952", "009331", "009328", "009329", "067111", "020611",  # vancomycin
    ])
    # name matching covers drugs without a listed GSN
    names: List[str] = Field(default_factory=lambda: [
        "penicillin", "vancomycin", "ceftriaxone", "cefepime", "cefazolin",
        "piperacillin", "meropenem", "levofloxacin", "ciprofloxacin",
        "metronidazole", "azithromycin", "ampicillin", "gentamicin",
        "clindamycin", "linezolid", "daptomycin", "doxycycline",
    ])

    @field_validator("names")
    @classmethod
    def _lowercase(cls, v: List[str]) -> List[str]:
        return [n.strip().lower() for n in v if n.strip()]


class IngestSettings(_Section):
    chunk_rows: int = Field(200_000, gt=0)
    lab_join_key: Literal["hadm_id", "stay_id"] = "hadm_id"


class RuntimeSettings(_Section):
    threads: int = Field(0, ge=0)     # 0 = all available cores
    seed: Optional[int] = Field(None, ge=0)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        case_sensitive=False,
        extra="forbid",
        frozen=True,
    )

    cohort: CohortSettings = Field(default_factory=CohortSettings)
    soi: SoiSettings = Field(default_factory=SoiSettings)
    sofa: SofaSettings = Field(default_factory=SofaSettings)
    antibiotics: AntibioticSettings = Field(default_factory=AntibioticSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ingest: IngestSettings = Field(default_factory=IngestSettings)
    runtime: RuntimeSettings = Field(default_factory=RuntimeSettings)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    def with_overrides(self, overrides: Dict[str, Any]) -> "Settings":
        """Copy with dotted-key overrides applied, e.g. {"soi.abx_window_h": 48}."""
        if not overrides:
            return self
        data = self.model_dump(mode="python")
        for dotted, value in overrides.items():
            _set_dotted(data, dotted, value)
        return build_settings(data)


# ── Loading ───────────────────────────────────────────────────

def _set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    section, _, key = dotted.partition(".")
    if not key or section not in data or not isinstance(data[section], dict):
        raise ConfigError(f"unknown settings key '{dotted}'", key=dotted)
    data[section][key] = value


def build_settings(data: Dict[str, Any], source: Optional[Path] = None) -> Settings:
    """Validate a raw mapping into Settings, translating errors into ConfigError."""
    try:
        return Settings(**data)
    except ValidationError as exc:
        err = exc.errors()[0]
        dotted = ".".join(str(p) for p in err["loc"])
        line = line_of_key(source, dotted) if source else None
        raise ConfigError(f"{dotted}: {err['msg']}", key=dotted, line=line, path=source) from exc


def line_of_key(path: Optional[Path], dotted: str) -> Optional[int]:
    """Best-effort 1-based line of a dotted key inside a TOML file."""
    if path is None or not Path(path).is_file():
        return None
    parts = [p for p in dotted.split(".") if not p.isdigit()]
    if not parts:
        return None
    leaf, tables = parts[-1], parts[:-1]
    current: List[str] = []
    fallback: Optional[int] = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line.startswith("["):
            current = line.strip("[]").strip().split(".")
            if current == parts:
                return lineno
            continue
        if "=" not in line:
            continue
        key = line.split("=", 1)[0].strip().strip('"')
        if key == leaf:
            if current == tables:
                return lineno
            fallback = fallback or lineno
    return fallback


def read_toml(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise InputMissingError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", path=path) from exc


def load_settings(path: Path) -> Settings:
    """Build Settings from a TOML file whose top-level tables are the settings sections."""
    return build_settings(read_toml(path), source=Path(path))


@lru_cache()
def get_settings() -> Settings:
    """Cached default settings instance."""
    return Settings()


settings = get_settings()
