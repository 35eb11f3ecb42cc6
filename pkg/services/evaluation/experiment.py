"""
services/evaluation/experiment.py
Experiment runner: chains every stage for a grid of feature sets × models × regimes × seeds.

Run directory layout:
    tables/                   generated tables (only when the experiment uses the generator)
    cohort/stays.csv
    labels/labels.csv, labels/manifest.csv
    features/<set>/           feature stores
    cells/<cell>/             model bundle + training curve per grid cell
    results.csv, results_table.md, run_manifest.json
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from config.experiment import ExperimentConfig
from config.settings import APP_VERSION, Settings, settings as default_settings
from services.cohort.service import build_cohort, write_manifest, write_stays
from services.evaluation.results import write_results
from services.evaluation.splits import make_split
from services.features.specs import featureset_label, load_featureset
from services.features.store import FeatureStore, extract_feature_store, write_feature_store
from services.ingest.tables import MimicAdapter
from services.labeling.service import label_cohort, write_labels
from services.synth.generator import generate, load_synth_config
from shared.exceptions import WorkbenchError
from shared.schemas.schemas import CellStatus, ExperimentResult, Regime, RunManifest, SplitPlan
from shared.utils.files import config_hash
from shared.utils.manifest import recorded_stage, write_manifest_file
from tasks.experiment_tasks import ExperimentInputs, grid_cells, run_cells

logger = logging.getLogger(__name__)


@dataclass
class ExperimentOutcome:
    results: List[ExperimentResult]
    manifest: RunManifest
    n_cells: int = 0
    n_failed: int = 0


def split_plans(
    units: Sequence[Tuple[str, str, str]],
    config: ExperimentConfig,
) -> Tuple[Dict[Tuple[str, int], SplitPlan], Dict[Tuple[str, int], str]]:
    """One plan per (regime, seed), shared by every feature set and model."""
    plans: Dict[Tuple[str, int], SplitPlan] = {}
    errors: Dict[Tuple[str, int], str] = {}
    for regime in config.regimes:
        ratios = config.split.ratios if regime == Regime.YEAR_AGNOSTIC.value else config.split.year_bucket_ratios
        for seed in config.seeds:
            try:
                plans[(regime, seed)] = make_split(units, regime, ratios, seed)
            except WorkbenchError as exc:
                errors[(regime, seed)] = str(exc)
                logger.warning(f"Split {regime} seed {seed} failed: {exc}")
    return plans, errors


def run_experiment(
    config: ExperimentConfig,
    out_dir: Path,
    settings: Optional[Settings] = None,
    synth_seed: Optional[int] = None,
) -> ExperimentOutcome:
    """Generator (optional) → cohort → labels → features → grid cells → results."""
    out_dir = Path(out_dir)
    cfg = config.pipeline_settings(settings or default_settings)
    manifest = RunManifest(
        config_hash=config_hash(config), tool_version=APP_VERSION, command="experiment",
        seeds=list(config.seeds), lab_join_key=cfg.ingest.lab_join_key,
    )

    if config.data.synth is not None:
        with recorded_stage(manifest, "synth-gen", out_dir) as rec:
            synth_cfg = load_synth_config(config.data.synth)
            if synth_seed is not None:
                synth_cfg = synth_cfg.model_copy(update={"seed": synth_seed})
            rec.outputs.extend(generate(synth_cfg, out_dir / "tables").paths)
        tables_dir = out_dir / "tables"
    else:
        tables_dir = Path(config.data.tables)
    adapter = MimicAdapter(tables_dir, cfg.ingest.lab_join_key)

    with recorded_stage(manifest, "ingest", out_dir) as rec:
        (out_dir / "cohort").mkdir(parents=True, exist_ok=True)
        stays, cohort_report = build_cohort(adapter, cfg)
        rec.outputs.append(write_stays(stays, out_dir / "cohort" / "stays.csv"))
        rec.detail = {"cohort": cohort_report.as_dict(), "tables": adapter.describe()}

    with recorded_stage(manifest, "label", out_dir) as rec:
        (out_dir / "labels").mkdir(parents=True, exist_ok=True)
        run = label_cohort(adapter, stays, config.task, config.label_seed, cfg)
        rec.outputs.append(write_labels(run.labels, stays, out_dir / "labels" / "labels.csv"))
        rec.outputs.append(write_manifest(run.manifest, out_dir / "labels" / "manifest.csv"))
        rec.detail = {"onset_rejected": run.report.onset_rejected, "kept": run.report.kept,
                      "unscoreable": run.unscoreable, "ingest": run.ingest}

    stores: Dict[str, FeatureStore] = {}
    with recorded_stage(manifest, "extract-features", out_dir) as rec:
        for name in config.feature_sets:
            spec = load_featureset(name)
            label = featureset_label(spec, Path(name).stem)
            store = extract_feature_store(adapter, stays, run.manifest, spec, config.task, cfg)
            target = out_dir / "features" / label
            target.mkdir(parents=True, exist_ok=True)
            rec.outputs.extend(write_feature_store(store, target))
            stores[label] = store

    with recorded_stage(manifest, "split", out_dir) as rec:
        static = next(iter(stores.values())).static
        units = [tuple(map(str, u)) for u in static[["stay_id", "patient_id", "year_bucket"]].itertuples(index=False)]
        plans, plan_errors = split_plans(units, config)
        rec.detail = {"failed": {f"{r}/{s}": e for (r, s), e in plan_errors.items()}}

    inputs = ExperimentInputs(config=config, settings=cfg, stores=stores, plans=plans,
                              plan_errors=plan_errors, out_dir=out_dir)
    cells = grid_cells(config, list(stores))
    outcomes = run_cells(cells, inputs, cfg.runtime.threads)

    results: List[ExperimentResult] = []
    n_failed = 0
    for outcome in outcomes:
        manifest.record(outcome.stage_record(out_dir))
        results.extend(outcome.results)
        n_failed += outcome.status == CellStatus.FAILED.value
    if n_failed:
        logger.warning(f"Experiment: {n_failed} of {len(cells)} cells failed; see run_manifest.json")

    with recorded_stage(manifest, "results", out_dir) as rec:
        rec.outputs.extend(write_results(results, out_dir, feature_sets=list(stores),
                                         models=config.models, title=config.name))
    write_manifest_file(manifest, out_dir)
    logger.info(f"Experiment {config.name}: {len(results)} AUCs from {len(cells) - n_failed}/{len(cells)} cells")
    return ExperimentOutcome(results=results, manifest=manifest, n_cells=len(cells), n_failed=n_failed)
