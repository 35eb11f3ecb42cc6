"""
services/evaluation/splits.py
Patient-level train/val/test assignment for the two evaluation regimes.

  year_agnostic  every patient is drawn into train, val or test regardless of bucket
  year_bucket    only 2008-2010 patients reach train/val (ratios[0]/ratios[1]); the rest of
                 that bucket is a same-bucket test slice and every later bucket is test
"""

import logging
import math
from collections import defaultdict
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from shared.exceptions import ConfigError, EmptySplitError
from shared.models.models import ModelDataset
from shared.schemas.schemas import (
    TRAIN_BUCKET,
    YEAR_BUCKETS,
    CohortStay,
    Regime,
    SplitAssignment,
    SplitPlan,
    SplitRole,
)

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.7, 0.15, 0.15)

# (stay_id, patient_id, year_bucket)
SplitUnit = Tuple[str, str, str]


def split_units(source: Union[ModelDataset, Iterable[CohortStay], Iterable[SplitUnit]]) -> List[SplitUnit]:
    if isinstance(source, ModelDataset):
        return list(zip(source.stay_ids, source.patient_ids, source.buckets))
    units = []
    for item in source:
        if isinstance(item, CohortStay):
            units.append((item.stay_id, item.patient_id, item.year_bucket))
        else:
            stay_id, patient_id, bucket = item
            units.append((str(stay_id), str(patient_id), str(bucket)))
    return units


def check_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {list(ratios)}",
                          key="split.ratios")
    return tuple(float(r) for r in ratios)


def _counts(n: int, ratios: Tuple[float, float, float]) -> Tuple[int, int]:
    n_train = math.floor(round(n * ratios[0], 9))
    n_val = math.floor(round(n * ratios[1], 9))
    return n_train, n_val


def _draw(patients: List[str], ratios, rng: np.random.Generator) -> Dict[str, str]:
    order = [patients[i] for i in rng.permutation(len(patients))]
    n_train, n_val = _counts(len(order), ratios)
    roles = {}
    for k, patient in enumerate(order):
        if k < n_train:
            roles[patient] = SplitRole.TRAIN.value
        elif k < n_train + n_val:
            roles[patient] = SplitRole.VAL.value
        else:
            roles[patient] = SplitRole.TEST.value
    return roles


def make_split(
    cohort: Union[ModelDataset, Iterable[CohortStay], Iterable[SplitUnit]],
    regime: str,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitPlan:
    regime = Regime(regime).value
    ratios = check_ratios(ratios)
    units = split_units(cohort)
    if not units:
        raise EmptySplitError("cannot split an empty cohort")

    stays_of: Dict[str, List[SplitUnit]] = defaultdict(list)
    for unit in units:
        stays_of[unit[1]].append(unit)
    patients = sorted(stays_of)
    rng = np.random.default_rng(seed)

    if regime == Regime.YEAR_AGNOSTIC.value:
        roles = _draw(patients, ratios, rng)
    else:
        per_bucket = {b: sum(1 for u in units if u[2] == b) for b in YEAR_BUCKETS}
        empty = [b for b, n in per_bucket.items() if n == 0]
        if empty:
            raise EmptySplitError(f"year-bucket regime needs stays in every bucket; none in {', '.join(empty)}")
        # a patient with any later-bucket stay is test only
        pool = [p for p in patients if all(u[2] == TRAIN_BUCKET for u in stays_of[p])]
        roles = {p: SplitRole.TEST.value for p in patients}
        roles.update(_draw(pool, ratios, rng))

    assignments = {
        stay_id: SplitAssignment(role=roles[patient], bucket=bucket)
        for patient in patients
        for stay_id, _, bucket in stays_of[patient]
    }
    plan = SplitPlan(regime=regime, seed=seed, ratios=ratios, assignments=assignments)
    for role in (SplitRole.TRAIN, SplitRole.VAL):
        if not plan.stays(role):
            raise EmptySplitError(f"{regime} split leaves the {role.value} split empty")
    logger.debug(
        f"Split {regime} seed={seed}: train={len(plan.stays(SplitRole.TRAIN))} "
        f"val={len(plan.stays(SplitRole.VAL))} test={len(plan.stays(SplitRole.TEST))}"
    )
    return plan


def plan_to_rows(plan: SplitPlan) -> List[Dict[str, str]]:
    return [
        {"stay_id": s, "role": a.role, "bucket": a.bucket}
        for s, a in sorted(plan.assignments.items())
    ]


def plan_from_rows(rows: Iterable[Dict[str, str]], regime: str, seed: int, ratios) -> SplitPlan:
    return SplitPlan(
        regime=regime, seed=seed, ratios=tuple(ratios),
        assignments={r["stay_id"]: SplitAssignment(role=r["role"], bucket=r["bucket"]) for r in rows},
    )
