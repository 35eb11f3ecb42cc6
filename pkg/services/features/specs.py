"""
services/features/specs.py
Feature-set files (TOML). Shipped sets live next to this module; a custom set can be
loaded from any path. A file may declare ``extends = "<set>"`` and ``exclude_icd = true``.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Set, Union

from pydantic import ValidationError

from config.settings import read_toml
from services.ingest.registry import build_item_registry
from shared.exceptions import FeatureSpecError
from shared.schemas.schemas import FeatureSetName, FeatureSetSpec, HourlyFeature, IcdFeature, StaticFeature

FEATURESET_DIR = Path(__file__).parent / "featuresets"
SHIPPED = tuple(n.value for n in FeatureSetName if n != FeatureSetName.CUSTOM)


def _resolve(name_or_path: Union[str, Path]) -> Path:
    candidate = Path(name_or_path)
    if str(name_or_path) in SHIPPED:
        return FEATURESET_DIR / f"{name_or_path}.toml"
    if candidate.suffix == ".toml" and candidate.is_file():
        return candidate
    raise FeatureSpecError(
        f"unknown feature set {name_or_path!r}; expected one of {', '.join(SHIPPED)} or a .toml path"
    )


def _set_name(raw: Dict[str, Any]) -> str:
    name = raw.get("name", FeatureSetName.CUSTOM.value)
    return name if name in {n.value for n in FeatureSetName} else FeatureSetName.CUSTOM.value


def _parse(raw: Dict[str, Any], path: Path, seen: Set[Path]) -> FeatureSetSpec:
    name = _set_name(raw)
    if "extends" in raw:
        parent_path = _resolve(raw["extends"])
        if parent_path in seen:
            raise FeatureSpecError(f"{path}: circular 'extends' through {parent_path}")
        parent = _load(parent_path, seen | {parent_path})
        spec = parent.model_copy(update={"name": name})
        if raw.get("exclude_icd"):
            spec = spec.model_copy(update={"icd_features": []})
        if "title" in raw:
            spec = spec.model_copy(update={"title": raw["title"]})
        return FeatureSetSpec.model_validate(spec.model_dump())

    try:
        spec = FeatureSetSpec(
            name=name,
            title=raw.get("title", ""),
            hourly_features=[
                HourlyFeature(
                    name=h["name"],
                    item_ids=tuple(str(i) for i in h.get("items", [])),
                    aggregation=h.get("aggregation", "mean"),
                    source=h.get("source", "chart"),
                )
                for h in raw.get("hourly", [])
            ],
            static_features=[
                StaticFeature(
                    name=s["name"], source=s["source"], column=s["column"],
                    encoding=s.get("encoding", "one_hot"),
                )
                for s in raw.get("static", [])
            ],
            icd_features=[
                IcdFeature(name=i["name"], codes=tuple(str(c) for c in i["codes"]), icd_version=int(i["version"]))
                for i in ([] if raw.get("exclude_icd") else raw.get("icd", []))
            ],
        )
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        raise FeatureSpecError(f"{path}: invalid feature set: {exc}") from exc
    return spec


def _load(path: Path, seen: Set[Path]) -> FeatureSetSpec:
    spec = _parse(read_toml(path), path, seen)
    build_item_registry(spec)
    return spec


def load_featureset(name_or_path: Union[str, Path]) -> FeatureSetSpec:
    """Load a shipped feature set by name, or a custom one from a TOML path."""
    path = _resolve(name_or_path)
    return _load(path, {path})


def featureset_label(spec: FeatureSetSpec, fallback: Optional[str] = None) -> str:
    return spec.name if spec.name != FeatureSetName.CUSTOM.value else (fallback or spec.title or "custom")
