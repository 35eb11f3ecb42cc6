"""
services/evaluation/scoring.py
Fit one model on one split and score it per evaluation column.
"""

import logging
from typing import List, Tuple

from services.evaluation.metrics import auc
from services.evaluation.results import AGNOSTIC_COLUMN
from services.features.standardize import standardize
from services.features.store import FeatureStore
from services.models.bundle import ModelBundle
from services.models.networks import predict_batch
from services.models.training import train
from shared.exceptions import UndefinedAucError
from shared.schemas.schemas import ExperimentResult, Regime, SplitPlan, SplitRole, TrainConfig

logger = logging.getLogger(__name__)


def fit_on_split(store: FeatureStore, plan: SplitPlan, kind: str, config: TrainConfig) -> ModelBundle:
    """Freeze vocabularies and standardisation on the training split, then train."""
    train_ids = plan.stays(SplitRole.TRAIN)
    val_ids = plan.stays(SplitRole.VAL)
    encoder = store.fit_encoder(train_ids)
    dataset = store.to_dataset(encoder)
    scaler, (train_set, val_set) = standardize(
        dataset.select(train_ids), dataset.select(val_ids), continuous_mask=encoder.continuous_mask
    )
    result = train(train_set, val_set, kind, config)
    return ModelBundle(model=result.model, encoder=encoder, scaler=scaler, history=result.history)


def score_split(
    bundle: ModelBundle,
    store: FeatureStore,
    plan: SplitPlan,
    *,
    feature_set: str,
    task: str,
    seed: int,
) -> Tuple[List[ExperimentResult], List[str]]:
    """
    Test AUC per evaluation column: the whole test split for year-agnostic plans, one
    result per test bucket otherwise. Single-class test sets are skipped and returned.
    """
    dataset = bundle.scaler.transform(store.to_dataset(bundle.encoder))
    if plan.regime == Regime.YEAR_AGNOSTIC.value:
        groups = [(AGNOSTIC_COLUMN, plan.stays(SplitRole.TEST))]
    else:
        groups = [(b, plan.stays(SplitRole.TEST, b)) for b in plan.test_buckets()]

    results: List[ExperimentResult] = []
    skipped: List[str] = []
    for column, stay_ids in groups:
        test = dataset.select(stay_ids)
        probs = predict_batch(bundle.model, test.hourly, test.static)
        try:
            value = auc(probs, test.labels)
        except UndefinedAucError as exc:
            logger.warning(f"Scoring {feature_set}/{bundle.model.kind}/{plan.regime}: {column} skipped ({exc})")
            skipped.append(column)
            continue
        results.append(ExperimentResult(
            task=task, feature_set=feature_set, model_kind=bundle.model.kind, regime=plan.regime,
            test_bucket=column, seed=seed, auc=value, n=len(test), n_pos=int(test.labels.sum()),
        ))
    return results, skipped
