"""
tasks/experiment_tasks.py
Grid-cell execution for experiments. Each cell (feature set, model, regime, seed) fits
and scores independently; cells run on a thread pool and a failing cell is recorded
without stopping the others. Outcomes come back in grid order.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from config.experiment import ExperimentConfig
from config.settings import Settings
from services.evaluation.scoring import fit_on_split, score_split
from services.features.store import FeatureStore
from shared.schemas.schemas import CellStatus, ExperimentResult, SplitPlan, StageRecord
from shared.utils.manifest import relative_outputs
from shared.utils.parallel import parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridCell:
    feature_set: str
    model_kind: str
    regime: str
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.feature_set}/{self.model_kind}/{self.regime}/seed{self.seed}"

    @property
    def slug(self) -> str:
        return f"{self.feature_set}_{self.model_kind}_{self.regime}_s{self.seed}"


@dataclass
class ExperimentInputs:
    config: ExperimentConfig
    settings: Settings
    stores: Dict[str, FeatureStore]
    plans: Dict[Tuple[str, int], SplitPlan]
    plan_errors: Dict[Tuple[str, int], str] = field(default_factory=dict)
    out_dir: Optional[Path] = None


@dataclass
class CellOutcome:
    cell: GridCell
    status: str = CellStatus.OK.value
    results: List[ExperimentResult] = field(default_factory=list)
    skipped_buckets: List[str] = field(default_factory=list)
    seconds: float = 0.0
    epochs: int = 0
    best_epoch: int = 0
    outputs: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def stage_record(self, root: Path) -> StageRecord:
        record = StageRecord(
            stage=f"cell:{self.cell.cell_id}",
            status=self.status,
            seconds=self.seconds,
            outputs=list(self.outputs),
            detail={"epochs": self.epochs, "best_epoch": self.best_epoch,
                    "skipped_buckets": self.skipped_buckets, "n_results": len(self.results)},
            error=self.error,
        )
        relative_outputs(record, root)
        return record


def grid_cells(config: ExperimentConfig, feature_sets: Sequence[str]) -> List[GridCell]:
    return [
        GridCell(fs, model, regime, seed)
        for fs in feature_sets
        for model in config.models
        for regime in config.regimes
        for seed in config.seeds
    ]


def run_cell(cell: GridCell, inputs: ExperimentInputs) -> CellOutcome:
    outcome = CellOutcome(cell=cell)
    start = time.perf_counter()
    try:
        key = (cell.regime, cell.seed)
        if key in inputs.plan_errors:
            raise RuntimeError(f"no split: {inputs.plan_errors[key]}")
        plan = inputs.plans[key]
        store = inputs.stores[cell.feature_set]
        train_config = inputs.config.train.model_copy(update={"seed": cell.seed})

        bundle = fit_on_split(store, plan, cell.model_kind, train_config)
        outcome.epochs = len(bundle.history.records)
        outcome.best_epoch = bundle.history.best_epoch
        outcome.results, outcome.skipped_buckets = score_split(
            bundle, store, plan, feature_set=cell.feature_set, task=inputs.config.task, seed=cell.seed,
        )
        if inputs.out_dir is not None:
            target = Path(inputs.out_dir) / "cells" / cell.slug
            target.mkdir(parents=True, exist_ok=True)
            outcome.outputs = [str(p) for p in bundle.save(target)]
        logger.info(f"Cell {cell.cell_id}: {len(outcome.results)} AUCs, best epoch {outcome.best_epoch}")
    except Exception as exc:
        outcome.status = CellStatus.FAILED.value
        outcome.error = f"{type(exc).__name__}: {exc}"
        outcome.results = []
        logger.warning(f"Cell {cell.cell_id} failed: {outcome.error}")
    outcome.seconds = round(time.perf_counter() - start, 3)
    return outcome


def run_cells(cells: Sequence[GridCell], inputs: ExperimentInputs, threads: int = 0) -> List[CellOutcome]:
    return parallel_map(lambda cell: run_cell(cell, inputs), list(cells), threads)
