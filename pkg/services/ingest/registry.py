"""
services/ingest/registry.py
Item-ID registry: maps every raw item code of a feature set onto its high-level feature.
"""

from typing import Dict, NamedTuple

from shared.exceptions import FeatureSpecError
from shared.schemas.schemas import Aggregation, FeatureSetSpec


class ItemMapping(NamedTuple):
    feature: str
    aggregation: str


def build_item_registry(featureset: FeatureSetSpec) -> Dict[str, ItemMapping]:
    registry: Dict[str, ItemMapping] = {}
    for feature in featureset.hourly_features:
        for item_id in feature.item_ids:
            item_id = str(item_id).strip()
            existing = registry.get(item_id)
            if existing is not None and existing.feature != feature.name:
                raise FeatureSpecError(
                    f"{featureset.name}: item {item_id} maps to both "
                    f"'{existing.feature}' and '{feature.name}'"
                )
            registry[item_id] = ItemMapping(feature.name, Aggregation(feature.aggregation).value)
    return registry
